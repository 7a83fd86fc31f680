use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand, ValueEnum};

use formatbias::config::{build_registry, Config};
use formatbias::confidence;
use formatbias::dataset::{benchmark, benchmark_shaped, circular_expand, load_dataset, Dataset, BENCHMARKS};
use formatbias::metrics::{
    coverage_filter, deviation_from_mean, filtered_deviation_from_mean, ResultGrid, COVERAGE_THRESHOLD,
};
use formatbias::mitigation::{live_scorecard, published_scorecard, pseudo_gt, LiveInputs};
use formatbias::prompt::{enumerate_formats, render_prompt, PromptFormat};
use formatbias::report::{self, svg};
use formatbias::run_matrix::{aggregate, execute, execute_cloze, plan_runs, Cache, ExecuteOptions};
use formatbias::significance::{build_design, fit_lmm_with, BaseLevels, Criterion};

const EXIT_INCOMPLETE: u8 = 2;

#[derive(Parser)]
#[command(name = "formatbias", version, about = "Prompt-format bias analysis for multiple-choice (V)QA")]
struct Cli {
    /// TOML configuration with backends and run defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Directory holding run records.
    #[arg(long, global = true)]
    cache: Option<PathBuf>,
    /// Directory for tables and figures.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render one question under one or all formats.
    Render {
        #[arg(long)]
        question: String,
        #[arg(long = "option", required = true)]
        options: Vec<String>,
        /// `separator/delimiter/id_set`, or `all`.
        #[arg(long, default_value = "all")]
        format: String,
    },
    /// Print the circular expansion of a dataset as JSON lines.
    Expand {
        #[arg(long)]
        dataset: PathBuf,
    },
    /// Count requests for a run matrix.
    Plan {
        #[arg(long, value_delimiter = ',', default_value = "model")]
        models: Vec<String>,
        #[arg(long, value_delimiter = ',')]
        datasets: Vec<PathBuf>,
        #[arg(long, default_value = "all")]
        formats: String,
        /// Use synthetic datasets matching the published benchmark sizes.
        #[arg(long)]
        benchmarks: bool,
    },
    /// Execute a run matrix against backends, resuming from the cache.
    Run {
        #[arg(long, value_delimiter = ',', required = true)]
        models: Vec<String>,
        #[arg(long, value_delimiter = ',', required = true)]
        datasets: Vec<PathBuf>,
        #[arg(long, default_value = "all")]
        formats: String,
        #[arg(long)]
        max_inflight: Option<usize>,
        #[arg(long)]
        max_attempts: Option<u32>,
        /// Also score cloze continuations for every option.
        #[arg(long)]
        cloze: bool,
    },
    /// Aggregate cached records into a grid and compute deviations.
    Metrics {
        /// Analyze this grid CSV instead of the cache.
        #[arg(long)]
        grid: Option<PathBuf>,
        #[arg(long, default_value_t = COVERAGE_THRESHOLD)]
        coverage_threshold: f64,
    },
    /// Compare mitigation methods against the all-format average.
    Mitigate {
        /// Live mode: datasets whose cached records to score.
        #[arg(long, value_delimiter = ',')]
        datasets: Vec<PathBuf>,
        /// Dataset used to estimate the PriDe prior (defaults to each dataset).
        #[arg(long)]
        calibration: Option<PathBuf>,
        /// Format for the single-format methods (defaults to the dataset's standard one).
        #[arg(long)]
        format: Option<String>,
    },
    /// Fit the mixed model for format effects.
    Lmm {
        #[arg(long)]
        grid: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = CriterionArg::Ml)]
        criterion: CriterionArg,
    },
    /// Confidence-bin analysis for one model and dataset.
    Confidence {
        #[arg(long)]
        model: String,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        reference: Option<String>,
    },
    /// Emit tables and SVG figures for a grid.
    Report {
        #[arg(long)]
        grid: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum CriterionArg {
    Ml,
    Reml,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(EXIT_INCOMPLETE),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn parse_formats(spec: &str) -> anyhow::Result<Vec<PromptFormat>> {
    if spec == "all" {
        return Ok(enumerate_formats());
    }
    spec.split(',')
        .map(|s| s.trim().parse::<PromptFormat>().map_err(Into::into))
        .collect()
}

fn load_datasets(paths: &[PathBuf]) -> anyhow::Result<Vec<Dataset>> {
    paths
        .iter()
        .map(|p| load_dataset(p).with_context(|| format!("loading {}", p.display())))
        .collect()
}

fn out_dir(cli_out: &Option<PathBuf>, config: &Config) -> anyhow::Result<PathBuf> {
    let dir = cli_out
        .clone()
        .or_else(|| config.run.out.clone())
        .unwrap_or_else(|| PathBuf::from("out"));
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(dir)
}

fn cache_dir(cli_cache: &Option<PathBuf>, config: &Config) -> PathBuf {
    cli_cache
        .clone()
        .or_else(|| config.run.cache.clone())
        .unwrap_or_else(|| PathBuf::from("cache"))
}

fn load_grid(path: &Option<PathBuf>) -> anyhow::Result<ResultGrid> {
    Ok(match path {
        Some(p) => ResultGrid::load(p).with_context(|| format!("loading {}", p.display()))?,
        None => report::published_grid()?,
    })
}

fn write_file(dir: &Path, name: &str, bytes: &[u8]) -> anyhow::Result<()> {
    let p = dir.join(name);
    fs::write(&p, bytes).with_context(|| format!("writing {}", p.display()))?;
    println!("wrote {}", p.display());
    Ok(())
}

fn file_name(dataset: &str) -> String {
    dataset
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' { c } else { '_' })
        .collect()
}

fn dispatch(cli: Cli) -> anyhow::Result<bool> {
    let config = match &cli.config {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    match &cli.command {
        Command::Render {
            question,
            options,
            format,
        } => {
            for f in parse_formats(format)? {
                println!("### {f}");
                println!("{}", render_prompt(question, options, f)?);
            }
            Ok(true)
        }
        Command::Expand { dataset } => {
            let ds = load_dataset(dataset)?;
            for r in &ds.records {
                for inst in circular_expand(r) {
                    println!("{}", serde_json::to_string(&inst)?);
                }
            }
            Ok(true)
        }
        Command::Plan {
            models,
            datasets,
            formats,
            benchmarks,
        } => {
            let mut ds = load_datasets(datasets)?;
            if *benchmarks {
                for b in &BENCHMARKS {
                    ds.push(benchmark_shaped(b)?);
                }
            }
            if ds.is_empty() {
                bail!("no datasets given");
            }
            let refs: Vec<&Dataset> = ds.iter().collect();
            let names: Vec<&str> = models.iter().map(String::as_str).collect();
            let plan = plan_runs(&names, &refs, &parse_formats(formats)?)?;
            println!("dataset,instances_per_cell,requests");
            for (d, n) in &plan.instances {
                println!("{d},{n},{}", plan.requests_for_dataset(d));
            }
            println!("cells,{}", plan.cells.len());
            println!("total_requests,{}", plan.total_requests);
            Ok(true)
        }
        Command::Run {
            models,
            datasets,
            formats,
            max_inflight,
            max_attempts,
            cloze,
        } => {
            let ds = load_datasets(datasets)?;
            let refs: Vec<&Dataset> = ds.iter().collect();
            let names: Vec<&str> = models.iter().map(String::as_str).collect();
            let registry = build_registry(&config, &names, &refs)?;
            let plan = plan_runs(&names, &refs, &parse_formats(formats)?)?;
            let cache = Cache::open(cache_dir(&cli.cache, &config))?;
            let defaults = ExecuteOptions::default();
            let opts = ExecuteOptions {
                max_inflight: max_inflight.or(config.run.max_inflight).unwrap_or(defaults.max_inflight),
                max_attempts: max_attempts.or(config.run.max_attempts).unwrap_or(defaults.max_attempts),
                ..defaults
            };
            let summary = execute(&plan, &refs, &registry, &cache, &opts)?;
            println!(
                "planned {} skipped {} issued {} ok {} failed {}",
                summary.planned, summary.skipped, summary.issued, summary.succeeded, summary.failed
            );
            let mut complete = summary.is_complete();
            for c in &summary.incomplete_cells {
                eprintln!("incomplete: {c}");
            }
            if *cloze {
                let s = execute_cloze(&names, &refs, &registry, &cache, &opts)?;
                println!("cloze: planned {} skipped {} ok {} failed {}", s.planned, s.skipped, s.succeeded, s.failed);
                complete &= s.failed == 0 && !s.cancelled;
            }
            Ok(complete)
        }
        Command::Metrics {
            grid,
            coverage_threshold,
        } => {
            let out = out_dir(&cli.out, &config)?;
            let mut complete = true;
            let grid = match grid {
                Some(_) => load_grid(grid)?,
                None => {
                    let cache = Cache::open(cache_dir(&cli.cache, &config))?;
                    let records = cache.load()?;
                    let agg = aggregate(&records, None)?;
                    for inc in &agg.incomplete {
                        eprintln!("incomplete: {} ({} ok, {} failed)", inc.cell, inc.succeeded, inc.failed);
                    }
                    complete = agg.incomplete.is_empty();
                    let mut freq = csv::Writer::from_writer(Vec::new());
                    freq.write_record(["model", "dataset", "format", "position", "selected", "present", "frequency"])?;
                    for c in &agg.cells {
                        let f = c.answer_frequencies();
                        for (i, v) in f.values.iter().enumerate() {
                            freq.write_record([
                                c.model.clone(),
                                c.dataset.clone(),
                                c.format.key(),
                                (i + 1).to_string(),
                                c.position_selected[i].to_string(),
                                c.position_present[i].to_string(),
                                match (v, f.no_valid_answers) {
                                    (_, true) | (None, _) => String::new(),
                                    (Some(v), false) => format!("{v:.6}"),
                                },
                            ])?;
                        }
                    }
                    write_file(&out, "answer_frequencies.csv", &freq.into_inner()?)?;
                    let grid = ResultGrid::from_eval_cells(&agg.cells)?;
                    let mut buf = Vec::new();
                    grid.write_csv(&mut buf)?;
                    write_file(&out, "grid.csv", &buf)?;
                    grid
                }
            };
            let mut w = csv::Writer::from_writer(Vec::new());
            w.write_record(["model", "dataset", "level", "deviation_pp", "filtered_deviation_pp"])?;
            for d in grid.datasets() {
                for m in grid.models_for(&d) {
                    let Ok(dev) = deviation_from_mean(&grid, &m, &d) else {
                        eprintln!("skipping {m}/{d}: not all 48 formats present");
                        continue;
                    };
                    let filt = filtered_deviation_from_mean(&grid, &m, &d, *coverage_threshold)?;
                    for (x, (_, fd)) in dev.iter().zip(filt) {
                        w.write_record([
                            m.clone(),
                            d.clone(),
                            x.level.name().to_string(),
                            format!("{:.6}", x.deviation),
                            fd.map(|v| format!("{v:.6}")).unwrap_or_default(),
                        ])?;
                    }
                }
            }
            write_file(&out, "deviations.csv", &w.into_inner()?)?;
            let removed = coverage_filter(&grid, *coverage_threshold).removed;
            println!("cells below coverage threshold: {}", removed.len());
            Ok(complete)
        }
        Command::Mitigate {
            datasets,
            calibration,
            format,
        } => {
            let out = out_dir(&cli.out, &config)?;
            if datasets.is_empty() {
                let rows = report::published_mitigation()?;
                let grid = report::published_grid()?;
                for name in ["A-OKVQA", "HRBench-4K", "V*Bench"] {
                    let gt = pseudo_gt(&grid, name)?;
                    let card = published_scorecard(&rows, name, Some(&gt))?;
                    let mut buf = Vec::new();
                    card.write_csv(&mut buf)?;
                    write_file(&out, &format!("scorecard_{}.csv", file_name(name)), &buf)?;
                }
                return Ok(true);
            }
            let ds = load_datasets(datasets)?;
            let calib = calibration.as_ref().map(|p| load_dataset(p)).transpose()?;
            let cache = Cache::open(cache_dir(&cli.cache, &config))?;
            let records = cache.load()?;
            let cloze = cache.load_cloze()?;
            let agg = aggregate(&records, None)?;
            let grid = ResultGrid::from_eval_cells(&agg.cells)?;
            for d in &ds {
                let f = match format {
                    Some(f) => f.parse()?,
                    None => benchmark(&d.name)
                        .map(|b| b.standard_format)
                        .with_context(|| format!("no standard format known for {}; pass --format", d.name))?,
                };
                let card = live_scorecard(&LiveInputs {
                    dataset: d,
                    grid: &grid,
                    records: &records,
                    cloze: &cloze,
                    format: f,
                    calibration: calib.as_ref(),
                })?;
                let mut buf = Vec::new();
                card.write_csv(&mut buf)?;
                write_file(&out, &format!("scorecard_{}.csv", file_name(&d.name)), &buf)?;
            }
            Ok(true)
        }
        Command::Lmm { grid, criterion } => {
            let out = out_dir(&cli.out, &config)?;
            let grid = load_grid(grid)?;
            let design = build_design(&grid, BaseLevels::default())?;
            let crit = match criterion {
                CriterionArg::Ml => Criterion::Ml,
                CriterionArg::Reml => Criterion::Reml,
            };
            let fit = fit_lmm_with(&design, crit)?;
            println!(
                "rows {} groups {} sigma2_group {:.4} sigma2_resid {:.4} loglik {:.4}",
                fit.n_obs, fit.n_groups, fit.sigma2_group, fit.sigma2_resid, fit.log_likelihood
            );
            let mut buf = Vec::new();
            fit.write_csv(&mut buf)?;
            print!("{}", String::from_utf8_lossy(&buf));
            write_file(&out, "effects.csv", &buf)?;
            write_file(&out, "effects.svg", svg::effects_chart(&fit).as_bytes())?;
            Ok(true)
        }
        Command::Confidence {
            model,
            dataset,
            reference,
        } => {
            let out = out_dir(&cli.out, &config)?;
            let ds = load_dataset(dataset)?;
            let reference = match reference {
                Some(f) => f.parse()?,
                None => benchmark(&ds.name)
                    .map(|b| b.standard_format)
                    .with_context(|| format!("no standard format known for {}; pass --reference", ds.name))?,
            };
            let cache = Cache::open(cache_dir(&cli.cache, &config))?;
            let records = cache.load()?;
            let (binning, rows) = confidence::analyze(&records, model, &ds, reference)?;
            let (t, m, b) = binning.sizes();
            println!("bins: top20 {t} middle60 {m} bottom20 {b}");
            let mut buf = Vec::new();
            confidence::write_bin_csv(&rows, &mut buf)?;
            write_file(&out, &format!("confidence_{}.csv", file_name(&ds.name)), &buf)?;
            Ok(true)
        }
        Command::Report { grid } => {
            let out = out_dir(&cli.out, &config)?;
            let g = load_grid(grid)?;
            for d in g.datasets() {
                let stem = file_name(&d);
                write_file(&out, &format!("ranks_{stem}.svg"), svg::rank_boxplot(&g, &d)?.as_bytes())?;
                write_file(&out, &format!("deviation_{stem}.svg"), svg::deviation_heatmap(&g, &d, None)?.as_bytes())?;
                write_file(
                    &out,
                    &format!("deviation_filtered_{stem}.svg"),
                    svg::deviation_heatmap(&g, &d, Some(COVERAGE_THRESHOLD))?.as_bytes(),
                )?;
                let gt = pseudo_gt(&g, &d)?;
                let mut w = csv::Writer::from_writer(Vec::new());
                w.write_record(["model", "mean_accuracy", "rank"])?;
                for i in 0..gt.models.len() {
                    w.write_record([gt.models[i].clone(), format!("{:.4}", gt.accuracy[i]), gt.ranks[i].to_string()])?;
                }
                write_file(&out, &format!("pseudo_gt_{stem}.csv"), &w.into_inner()?)?;
            }
            // Stub grids are often degenerate (no within-group variation);
            // the figures above are still useful without the model fit.
            let fit = build_design(&g, BaseLevels::default()).and_then(|d| fit_lmm_with(&d, Criterion::Ml));
            match fit {
                Ok(fit) => {
                    let mut buf = Vec::new();
                    fit.write_csv(&mut buf)?;
                    write_file(&out, "effects.csv", &buf)?;
                    write_file(&out, "effects.svg", svg::effects_chart(&fit).as_bytes())?;
                }
                Err(e) => eprintln!("warning: skipping format effects: {e}"),
            }
            Ok(true)
        }
    }
}
