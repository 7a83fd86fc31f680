//! Acceptance suite. Prints one PASS/FAIL line per criterion.
//!
//! Two criteria compare against published figures that disagree with the
//! published per-row data they summarize. Those print FAIL. The suite then
//! checks that the failure is exactly the known inconsistency, so any other
//! deviation still fails the test.

mod common;

use std::path::Path;
use std::process::{Command, Stdio};
use std::time::{Duration, Instant};

use formatbias::dataset::{benchmark_shaped, expanded_count, synthetic, Dataset, BENCHMARKS};
use formatbias::metrics::{deviation_from_mean, ResultGrid};
use formatbias::mitigation::{pride_prior, pseudo_gt, published_scorecard, Method};
use formatbias::prompt::{enumerate_formats, render_prompt, FactorLevel, OptionDelimiter};
use formatbias::report::{published_grid, published_mitigation};
use formatbias::run_matrix::{plan_runs, Cache, ExecuteOptions};
use formatbias::significance::{build_design, fit_at_lambda, fit_lmm, BaseLevels, Criterion};
use formatbias::Error;

struct Outcome {
    pass: bool,
    detail: String,
    /// Set when the failure is the documented inconsistency in the published numbers.
    known: Option<&'static str>,
}

impl Outcome {
    fn check(pass: bool, detail: String) -> Self {
        Outcome { pass, detail, known: None }
    }
}

fn criterion_1() -> Outcome {
    let t = Instant::now();
    let formats = enumerate_formats();
    let distinct = formats.iter().collect::<std::collections::HashSet<_>>().len();
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("test-data/golden");
    let options = ["a red bus", "a bicycle", "a sailing boat", "a horse", "a train"];
    let (mut checked, mut mismatched) = (0, Vec::new());
    for f in &formats {
        for k in 2..=5 {
            let name = format!("{}__{}__{}__{k}.txt", f.separator.name(), f.delimiter.name(), f.id_set.name());
            let want = std::fs::read(dir.join(&name)).unwrap_or_default();
            let got = render_prompt("What is shown in the image?", &options[..k], *f).unwrap();
            checked += 1;
            if got.as_bytes() != &want[..] {
                mismatched.push(name);
            }
        }
    }
    let secs = t.elapsed().as_secs_f64();
    Outcome::check(
        formats.len() == 48 && distinct == 48 && checked >= 24 && mismatched.is_empty() && secs < 1.0,
        format!(
            "{} formats ({distinct} distinct), golden {}/{checked} byte-exact, {secs:.3}s",
            formats.len(),
            checked - mismatched.len()
        ),
    )
}

const MODELS: [&str; 7] = ["m1", "m2", "m3", "m4", "m5", "m6", "m7"];
const PRINTED_ROWS: [(&str, u64); 5] = [
    ("A-OKVQA", 1_538_880),
    ("HRBench-4K", 268_800),
    ("MMBench", 1_638_336),
    ("MME-RealWorld-Lite", 3_223_920),
    ("V*Bench", 200_256),
];
const PRINTED_TOTAL: u64 = 6_807_192;

fn criterion_2() -> Outcome {
    let datasets: Vec<Dataset> = BENCHMARKS.iter().map(|b| benchmark_shaped(b).unwrap()).collect();
    let mut bad = Vec::new();
    for (b, d) in BENCHMARKS.iter().zip(&datasets) {
        if d.len() != b.single || expanded_count(d) != b.circular {
            bad.push(format!("{} {}->{}", b.name, d.len(), expanded_count(d)));
        }
    }
    let refs: Vec<&Dataset> = datasets.iter().collect();
    let plan = plan_runs(&MODELS, &refs, &enumerate_formats()).unwrap();
    for (name, want) in PRINTED_ROWS {
        if plan.requests_for_dataset(name) != want {
            bad.push(format!("{name} {} != {want}", plan.requests_for_dataset(name)));
        }
    }
    let row_sum: u64 = PRINTED_ROWS.iter().map(|r| r.1).sum();
    let detail = format!(
        "expansions and per-dataset totals {}; A-OKVQA {}; grand total {} vs printed {PRINTED_TOTAL}",
        if bad.is_empty() { "match".to_string() } else { format!("differ: {bad:?}") },
        plan.requests_for_dataset("A-OKVQA"),
        plan.total_requests,
    );
    let pass = bad.is_empty() && plan.total_requests == PRINTED_TOTAL;
    let known = (bad.is_empty() && plan.total_requests == row_sum && row_sum == 6_870_192)
        .then_some("printed grand total transposes digits of the sum of its own rows (6,870,192)");
    Outcome { pass, detail, known }
}

fn criterion_3() -> Outcome {
    let t = Instant::now();
    let grid = published_grid().unwrap();
    let rows = published_mitigation().unwrap();
    let mut off = Vec::new();
    let mut compared = 0;
    for name in ["A-OKVQA", "HRBench-4K", "V*Bench"] {
        let gt = pseudo_gt(&grid, name).unwrap();
        for r in rows.iter().filter(|r| r.dataset == name && r.method == Method::PseudoGt) {
            let i = gt.models.iter().position(|m| *m == r.model).unwrap();
            compared += 1;
            if (gt.accuracy[i] - r.accuracy).abs() > 0.01 {
                off.push((name, r.model.clone(), r.accuracy, gt.accuracy[i]));
            }
        }
    }
    let secs = t.elapsed().as_secs_f64();
    let qwen = pseudo_gt(&grid, "A-OKVQA").unwrap();
    let q = qwen.accuracy[qwen.models.iter().position(|m| m == "Qwen-2.5-VL").unwrap()];
    let detail = format!(
        "{}/{compared} within 0.01 pp (Qwen-2.5-VL A-OKVQA {q:.2}), {secs:.3}s{}",
        compared - off.len(),
        off.iter()
            .map(|(d, m, p, c)| format!("; {d} {m} printed {p} vs {c:.4}"))
            .collect::<String>()
    );
    let pass = off.is_empty() && compared == 21 && secs < 1.0;
    let documented: Vec<(&str, &str)> = vec![("A-OKVQA", "Phi-3.5"), ("HRBench-4K", "LLaVA-1.5")];
    let found: Vec<(&str, &str)> = off.iter().map(|(d, m, _, _)| (*d, m.as_str())).collect();
    let known = (found == documented && compared == 21 && secs < 1.0)
        .then_some("two printed pseudo-GT values are not the means of the printed per-format tables");
    Outcome { pass, detail, known }
}

fn criterion_4() -> Outcome {
    let rows = published_mitigation().unwrap();
    let card = |d: &str| published_scorecard(&rows, d, None).unwrap();
    let a = card("A-OKVQA");
    let rho = a.column(Method::Vanilla).unwrap().spearman.unwrap();
    let got = |d: &str, m: Method| card(d).column(m).and_then(|c| c.correctly_ranked);
    let expected = [
        ("A-OKVQA", Method::Vanilla, 3),
        ("A-OKVQA", Method::Pia, 2),
        ("A-OKVQA", Method::Pride, 2),
        ("A-OKVQA", Method::CpLn, 0),
        ("HRBench-4K", Method::CpLn, 3),
        ("V*Bench", Method::CpLn, 3),
    ];
    let mut parts = vec![format!("A-OKVQA vanilla rho {rho:.4}")];
    let mut pass = (rho - 0.32).abs() <= 0.005;
    for (d, m, want) in expected {
        let g = got(d, m);
        pass &= g == Some(want);
        parts.push(format!("{d} {} {}/7", m.name(), g.map_or("NA".into(), |x| x.to_string())));
    }
    Outcome::check(pass, parts.join(", "))
}

fn criterion_5() -> Outcome {
    let t = Instant::now();
    let grid = published_grid().unwrap();
    let design = build_design(&grid, BaseLevels::default()).unwrap();
    let fit = fit_lmm(&design).unwrap();
    let mut pass = true;
    let mut parts = Vec::new();
    for (name, target) in [("numbers", -10.0), ("uppercase", 6.0), ("double_brackets", -5.0)] {
        let e = fit.effect(name).unwrap();
        pass &= (e.estimate - target).abs() <= 2.0 && e.estimate.signum() == f64::signum(target) && e.significant;
        parts.push(format!(
            "{name} {:+.2} [{:.2}, {:.2}]{}",
            e.estimate,
            e.ci_lo,
            e.ci_hi,
            if e.significant { "*" } else { "" }
        ));
    }
    let ols_fit = fit_at_lambda(&design, 0.0, Criterion::Ml).unwrap();
    let (beta, _, _) = common::ols(&common::rows_of(&design));
    let ols_err = ols_fit
        .effects
        .iter()
        .zip(&beta)
        .map(|(e, b)| (e.estimate - b).abs())
        .fold(0.0, f64::max);
    let secs = t.elapsed().as_secs_f64();
    pass &= ols_err <= 1e-8 && secs < 10.0;
    parts.push(format!("OLS max diff {ols_err:.1e}, {secs:.2}s"));
    Outcome::check(pass, parts.join(", "))
}

fn criterion_6() -> Outcome {
    let oracle = common::mitigation_oracle(1000, 0x5eed);
    let mixed_prior = matches!(
        pride_prior(&[vec![0.5, 0.5], vec![0.2, 0.3, 0.5]]),
        Err(Error::MixedOptionCounts(_))
    );
    let rows = published_mitigation().unwrap();
    let vstar = published_scorecard(&rows, "V*Bench", None).unwrap();
    let vstar_na = [Method::Pia, Method::Pride]
        .iter()
        .all(|m| vstar.column(*m).unwrap().accuracy.iter().all(Option::is_none));
    let live_na = live_mixed_is_na();
    let pass = matches!(oracle, Ok(w) if w <= 1e-12) && mixed_prior && vstar_na && live_na;
    Outcome::check(
        pass,
        format!(
            "1000 instances {}, mixed counts rejected: prior {mixed_prior}, live PIA/PriDe NA {live_na}, V*Bench NA {vstar_na}",
            match &oracle {
                Ok(w) => format!("max diff {w:.1e}"),
                Err(e) => e.clone(),
            }
        ),
    )
}

fn live_mixed_is_na() -> bool {
    use formatbias::config::{build_registry, Config};
    use formatbias::mitigation::{live_scorecard, LiveInputs};
    use formatbias::run_matrix::{aggregate, execute, execute_cloze};
    let ds = synthetic("mixed", &[2, 4, 3, 4, 2]).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let models = ["stub:oracle", "stub:position:0"];
    let refs = [&ds];
    let registry = build_registry(&Config::default(), &models, &refs).unwrap();
    let plan = plan_runs(&models, &refs, &enumerate_formats()).unwrap();
    let cache = Cache::open(dir.path()).unwrap();
    execute(&plan, &refs, &registry, &cache, &ExecuteOptions::default()).unwrap();
    execute_cloze(&models, &refs, &registry, &cache, &ExecuteOptions::default()).unwrap();
    let records = cache.load().unwrap();
    let cloze = cache.load_cloze().unwrap();
    let grid = ResultGrid::from_eval_cells(&aggregate(&records, None).unwrap().cells).unwrap();
    let card = live_scorecard(&LiveInputs {
        dataset: &ds,
        grid: &grid,
        records: &records,
        cloze: &cloze,
        format: enumerate_formats()[0],
        calibration: None,
    })
    .unwrap();
    [Method::Pia, Method::Pride]
        .iter()
        .all(|m| card.column(*m).unwrap().accuracy.iter().all(Option::is_none))
}

fn criterion_7(cache: &Path) -> (Outcome, ResultGrid) {
    let t = Instant::now();
    let s = common::run_stub_matrix(cache, &common::stub_datasets(), &ExecuteOptions::default());
    let grid = common::grid_from_cache(cache);
    let secs = t.elapsed().as_secs_f64();
    let mut pass = s.is_complete() && grid.len() == 2 * 4 * 48 && secs < 60.0;
    let mut max_off_target: f64 = 0.0;
    let mut target_dev: f64 = 0.0;
    for d in ["alpha", "beta"] {
        for f in enumerate_formats() {
            let o = grid.get("stub:oracle", d, f).unwrap();
            let p = grid.get("stub:position:0", d, f).unwrap();
            let r = grid.get("stub:refuse", d, f).unwrap();
            pass &= o.accuracy == 100.0 && o.coverage == 100.0 && p.accuracy == 25.0 && r.coverage == 0.0;
        }
        for dev in deviation_from_mean(&grid, "stub:format:double_brackets", d).unwrap() {
            match dev.level {
                FactorLevel::Delimiter(OptionDelimiter::DoubleBrackets) => target_dev = dev.deviation,
                FactorLevel::Delimiter(_) => {}
                _ => max_off_target = max_off_target.max(dev.deviation.abs()),
            }
        }
    }
    pass &= target_dev != 0.0 && max_off_target == 0.0;
    let detail = format!(
        "oracle 1.0/1.0, position 0.25, refuser coverage 0 on all formats; format stub double_brackets {target_dev:+.1} pp, other factors max |dev| {max_off_target}; {} requests in {secs:.1}s",
        s.planned
    );
    (Outcome::check(pass, detail), grid)
}

fn criterion_8(first: &Path, first_grid: &ResultGrid) -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let s = common::run_stub_matrix(dir.path(), &common::stub_datasets(), &ExecuteOptions::default());
    let grid = common::grid_from_cache(dir.path());
    let same_cache = common::cache_without_timestamps(first) == common::cache_without_timestamps(dir.path());
    let a = common::report_artifacts(first_grid);
    let b = common::report_artifacts(&grid);
    let differing: Vec<&String> = a.keys().filter(|k| a.get(*k) != b.get(*k)).collect();
    Outcome::check(
        s.is_complete() && same_cache && differing.is_empty() && a.len() == b.len(),
        format!(
            "cache identical (timestamps removed): {same_cache}; {} report files, {} differ",
            a.len(),
            differing.len()
        ),
    )
}

fn line_count(path: &Path) -> usize {
    std::fs::read_to_string(path).map(|s| s.lines().count()).unwrap_or(0)
}

fn criterion_9(reference: &ResultGrid) -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let mut paths = Vec::new();
    for d in common::stub_datasets() {
        let p = dir.path().join(format!("{}.jsonl", d.name));
        let text: String = d.records.iter().map(|r| serde_json::to_string(r).unwrap() + "\n").collect();
        std::fs::write(&p, text).unwrap();
        paths.push(p.to_str().unwrap().to_string());
    }
    let cfg = dir.path().join("slow.toml");
    std::fs::write(&cfg, "[run]\nstub_delay_ms = 2\n").unwrap();
    let cache = dir.path().join("cache");
    let models = common::STUBS.join(",");
    let datasets = paths.join(",");
    let bin = env!("CARGO_BIN_EXE_formatbias");
    let args = ["--cache", cache.to_str().unwrap(), "run", "--models", &models, "--datasets", &datasets];

    let mut child = Command::new(bin)
        .arg("--config")
        .arg(&cfg)
        .args(args)
        .stdout(Stdio::null())
        .stderr(Stdio::null())
        .spawn()
        .unwrap();
    let records = Cache::open(&cache).unwrap().records_path();
    let deadline = Instant::now() + Duration::from_secs(60);
    while line_count(&records) < 500 && Instant::now() < deadline {
        if child.try_wait().unwrap().is_some() {
            break;
        }
        std::thread::sleep(Duration::from_millis(10));
    }
    let exited_early = child.try_wait().unwrap().is_some();
    child.kill().ok();
    child.wait().unwrap();
    let at_kill = line_count(&records);

    let out = Command::new(bin).args(args).output().unwrap();
    let stdout = String::from_utf8_lossy(&out.stdout);
    let skipped: usize = stdout
        .split_whitespace()
        .skip_while(|w| *w != "skipped")
        .nth(1)
        .and_then(|n| n.parse().ok())
        .unwrap_or(0);
    let grid = common::grid_from_cache(&cache);
    let same = common::grid_csv(&grid) == common::grid_csv(reference);
    Outcome::check(
        !exited_early && at_kill < 15360 && out.status.success() && skipped > 0 && same,
        format!(
            "killed after {at_kill} records, restart reused {skipped} and exited {:?}; final grid identical: {same}",
            out.status.code()
        ),
    )
}

fn main() {
    let stub_cache = tempfile::tempdir().unwrap();
    let (c7, grid7) = criterion_7(stub_cache.path());
    let outcomes = vec![
        (1, criterion_1()),
        (2, criterion_2()),
        (3, criterion_3()),
        (4, criterion_4()),
        (5, criterion_5()),
        (6, criterion_6()),
        (7, c7),
        (8, criterion_8(stub_cache.path(), &grid7)),
        (9, criterion_9(&grid7)),
    ];
    let mut unexplained = Vec::new();
    for (n, o) in &outcomes {
        println!("{} criterion {n}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        if !o.pass {
            match o.known {
                Some(why) => println!("  known discrepancy: {why}"),
                None => unexplained.push(*n),
            }
        }
    }
    let passed = outcomes.iter().filter(|(_, o)| o.pass).count();
    println!("{passed}/{} criteria pass", outcomes.len());
    if !unexplained.is_empty() {
        eprintln!("criteria failing without a documented cause: {unexplained:?}");
        std::process::exit(1);
    }
}
