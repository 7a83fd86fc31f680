//! Helpers shared by the end-to-end and acceptance tests.
#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::Path;

use formatbias::config::{build_registry, Config};
use formatbias::dataset::{synthetic, Dataset};
use formatbias::metrics::ResultGrid;
use formatbias::mitigation::{cp_ln_select, perplexity, pia, pride_debias, pride_prior, PriorVector, PRIOR_FLOOR};
use formatbias::prompt::enumerate_formats;
use formatbias::report::svg;
use formatbias::significance::LmmDesign;
use formatbias::run_matrix::{aggregate, execute, plan_runs, Cache, ExecuteOptions, ExecuteSummary};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const STUBS: [&str; 4] = [
    "stub:oracle",
    "stub:position:0",
    "stub:refuse",
    "stub:format:double_brackets",
];

/// Two four-option datasets with gold answers spread over positions.
pub fn stub_datasets() -> Vec<Dataset> {
    vec![
        synthetic("alpha", &[4; 12]).unwrap(),
        synthetic("beta", &[4; 8]).unwrap(),
    ]
}

pub fn run_stub_matrix(cache_dir: &Path, datasets: &[Dataset], opts: &ExecuteOptions) -> ExecuteSummary {
    let refs: Vec<&Dataset> = datasets.iter().collect();
    let registry = build_registry(&Config::default(), &STUBS, &refs).unwrap();
    let plan = plan_runs(&STUBS, &refs, &enumerate_formats()).unwrap();
    let cache = Cache::open(cache_dir).unwrap();
    execute(&plan, &refs, &registry, &cache, opts).unwrap()
}

pub fn grid_from_cache(cache_dir: &Path) -> ResultGrid {
    let records = Cache::open(cache_dir).unwrap().load().unwrap();
    let agg = aggregate(&records, None).unwrap();
    assert!(agg.incomplete.is_empty(), "incomplete cells: {:?}", agg.incomplete);
    ResultGrid::from_eval_cells(&agg.cells).unwrap()
}

pub fn grid_csv(grid: &ResultGrid) -> String {
    let mut buf = Vec::new();
    grid.write_csv(&mut buf).unwrap();
    String::from_utf8(buf).unwrap()
}

/// Cache lines with the wall-clock field removed.
pub fn cache_without_timestamps(cache_dir: &Path) -> String {
    let text = std::fs::read_to_string(Cache::open(cache_dir).unwrap().records_path()).unwrap();
    text.lines()
        .map(|l| {
            let mut v: serde_json::Value = serde_json::from_str(l).unwrap();
            v.as_object_mut().unwrap().remove("timestamp");
            serde_json::to_string(&v).unwrap()
        })
        .collect::<Vec<_>>()
        .join("\n")
}

/// Every report artifact for a grid, keyed by file name.
pub fn report_artifacts(grid: &ResultGrid) -> BTreeMap<String, String> {
    let mut out = BTreeMap::new();
    out.insert("grid.csv".to_string(), grid_csv(grid));
    for d in grid.datasets() {
        out.insert(format!("ranks_{d}.svg"), svg::rank_boxplot(grid, &d).unwrap());
        out.insert(format!("deviation_{d}.svg"), svg::deviation_heatmap(grid, &d, None).unwrap());
        out.insert(
            format!("deviation_filtered_{d}.svg"),
            svg::deviation_heatmap(grid, &d, Some(0.75)).unwrap(),
        );
    }
    out
}

fn argmax_first(v: &[f64]) -> usize {
    let mut best = 0;
    for i in 1..v.len() {
        if v[i] > v[best] {
            best = i;
        }
    }
    best
}

fn random_simplex(rng: &mut ChaCha8Rng, k: usize) -> Vec<f64> {
    let w: Vec<f64> = (0..k).map(|_| rng.gen_range(0.01..1.0)).collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|x| x / s).collect()
}

/// Recomputes PIA, PriDe and CP-LN from raw per-question data on
/// `instances` random problems and compares with the library. Returns the
/// largest discrepancy seen, or the first disagreement.
pub fn mitigation_oracle(instances: usize, seed: u64) -> Result<f64, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for case in 0..instances {
        let k = rng.gen_range(2..=4);

        // PIA from per-question (gold position, answered position or none).
        let n = rng.gen_range(1..=12u64);
        let answers: Vec<(usize, Option<usize>)> = (0..n)
            .map(|_| {
                let gold = rng.gen_range(0..k);
                let ans = if rng.gen_bool(0.15) {
                    None
                } else if rng.gen_bool(0.5) {
                    Some(gold)
                } else {
                    Some(rng.gen_range(0..k))
                };
                (gold, ans)
            })
            .collect();
        let mut c = vec![0u64; k];
        let mut s = vec![0u64; k];
        for &(g, a) in &answers {
            if let Some(a) = a {
                s[a] += 1;
                if a == g {
                    c[a] += 1;
                }
            }
        }
        // Each correct answer at position i contributes C_i / (Pr_i N M).
        let mut brute = 0.0;
        for &(g, a) in &answers {
            if a == Some(g) {
                brute += c[g] as f64 / s[g] as f64 / n as f64 / k as f64;
            }
        }
        let lib = pia(&c, &s, n, k).map_err(|e| format!("case {case}: pia: {e}"))?;
        worst = worst.max((lib - brute).abs());
        if (lib - brute).abs() > 1e-12 {
            return Err(format!("case {case}: pia {lib} vs {brute}"));
        }

        // PriDe: prior as column means, then argmax of observed / prior.
        let calib: Vec<Vec<f64>> = (0..rng.gen_range(1..=6)).map(|_| random_simplex(&mut rng, k)).collect();
        let mut col = vec![0.0; k];
        for j in 0..k {
            for row in &calib {
                col[j] += row[j];
            }
            col[j] = (col[j] / calib.len() as f64).max(PRIOR_FLOOR);
        }
        let z: f64 = col.iter().sum();
        let brute_prior: Vec<f64> = col.iter().map(|x| x / z).collect();
        let prior = pride_prior(&calib).map_err(|e| format!("case {case}: prior: {e}"))?;
        for j in 0..k {
            worst = worst.max((prior.0[j] - brute_prior[j]).abs());
            if (prior.0[j] - brute_prior[j]).abs() > 1e-12 {
                return Err(format!("case {case}: prior {:?} vs {brute_prior:?}", prior.0));
            }
        }
        let observed = random_simplex(&mut rng, k);
        let ratios: Vec<f64> = observed.iter().zip(&brute_prior).map(|(o, p)| o / p).collect();
        let want = argmax_first(&ratios);
        let got = pride_debias(&observed, &PriorVector(brute_prior.clone())).map_err(|e| e.to_string())?;
        if got != want {
            return Err(format!("case {case}: pride picked {got}, expected {want}"));
        }

        // CP-LN: perplexity as the inverse geometric mean of token probabilities.
        let mut brute_ppl = Vec::with_capacity(k);
        let mut lib_ppl = Vec::with_capacity(k);
        for _ in 0..k {
            let t = rng.gen_range(1..=3);
            let lps: Vec<f64> = (0..t).map(|_| rng.gen_range(-6.0..-0.01)).collect();
            let prod: f64 = lps.iter().map(|l| l.exp()).product();
            let b = prod.powf(-1.0 / t as f64);
            let l = perplexity(&lps).map_err(|e| e.to_string())?;
            let rel = (l - b).abs() / b;
            worst = worst.max(rel);
            if rel > 1e-12 {
                return Err(format!("case {case}: perplexity {l} vs {b}"));
            }
            brute_ppl.push(b);
            lib_ppl.push(l);
        }
        let neg: Vec<f64> = brute_ppl.iter().map(|x| -x).collect();
        let want = argmax_first(&neg);
        let got = cp_ln_select(&lib_ppl).map_err(|e| e.to_string())?;
        if got != want {
            return Err(format!("case {case}: cp-ln picked {got}, expected {want}"));
        }
    }
    Ok(worst)
}

/// Solves `a x = b` by Gauss-Jordan elimination with partial pivoting.
pub fn solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for c in 0..n {
        let piv = (c..n).max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs())).unwrap();
        a.swap(c, piv);
        b.swap(c, piv);
        for r in 0..n {
            if r != c {
                let f = a[r][c] / a[c][c];
                for k in c..n {
                    a[r][k] -= f * a[c][k];
                }
                b[r] -= f * b[c];
            }
        }
    }
    (0..n).map(|i| b[i] / a[i][i]).collect()
}

pub fn inverse_diag(a: &[Vec<f64>]) -> Vec<f64> {
    let n = a.len();
    (0..n)
        .map(|j| {
            let mut e = vec![0.0; n];
            e[j] = 1.0;
            solve(a.to_vec(), e)[j]
        })
        .collect()
}

/// Normal equations on rows of (x, y).
pub fn ols(rows: &[(Vec<f64>, f64)]) -> (Vec<f64>, Vec<Vec<f64>>, f64) {
    let p = rows[0].0.len();
    let mut xtx = vec![vec![0.0; p]; p];
    let mut xty = vec![0.0; p];
    for (x, y) in rows {
        for i in 0..p {
            xty[i] += x[i] * y;
            for j in 0..p {
                xtx[i][j] += x[i] * x[j];
            }
        }
    }
    let beta = solve(xtx.clone(), xty);
    let rss = rows
        .iter()
        .map(|(x, y)| {
            let f: f64 = x.iter().zip(&beta).map(|(a, b)| a * b).sum();
            (y - f).powi(2)
        })
        .sum();
    (beta, xtx, rss)
}

pub fn rows_of(d: &LmmDesign) -> Vec<(Vec<f64>, f64)> {
    (0..d.n_rows())
        .map(|i| (d.x.row(i).iter().copied().collect(), d.y[i]))
        .collect()
}
