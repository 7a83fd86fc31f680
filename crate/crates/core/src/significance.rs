//! Linear mixed model for format effects.
//!
//! `accuracy = Xβ + u_g + ε` with one random intercept per (model, dataset)
//! group. For a fixed ratio `λ = σ²_u / σ²_ε` the marginal covariance is
//! `σ²_ε H` with `H = I + λ ZZᵀ`, which is block diagonal with blocks
//! `I + λ 11ᵀ`. Each block inverts in closed form,
//! `(I + λ 11ᵀ)⁻¹ = I − λ/(1 + λ n_g) 11ᵀ`, and has determinant `1 + λ n_g`,
//! so the generalized least squares solution and the profiled likelihood
//! only need a few per-group sums. The likelihood is then maximized over
//! `log10 λ` by golden-section search.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::metrics::ResultGrid;
use crate::prompt::{Factor, FactorLevel, OptionDelimiter, OptionIdSet, OptionSeparator, PromptFormat};

/// Two-sided 95% normal quantile.
pub const Z95: f64 = 1.959963984540054;

const LOG10_LAMBDA_LO: f64 = -8.0;
const LOG10_LAMBDA_HI: f64 = 8.0;
const SEARCH_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BaseLevels {
    pub id_set: OptionIdSet,
    pub delimiter: OptionDelimiter,
    pub separator: OptionSeparator,
}

impl Default for BaseLevels {
    fn default() -> Self {
        BaseLevels {
            id_set: OptionIdSet::Lowercase,
            delimiter: OptionDelimiter::Bracket,
            separator: OptionSeparator::Comma,
        }
    }
}

impl BaseLevels {
    fn contains(&self, level: FactorLevel) -> bool {
        match level {
            FactorLevel::IdSet(s) => s == self.id_set,
            FactorLevel::Delimiter(d) => d == self.delimiter,
            FactorLevel::Separator(s) => s == self.separator,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LmmDesign {
    pub y: DVector<f64>,
    pub x: DMatrix<f64>,
    /// Group index per row.
    pub groups: Vec<usize>,
    pub group_names: Vec<String>,
    /// "intercept" followed by the non-base level names.
    pub columns: Vec<String>,
    pub column_levels: Vec<Option<FactorLevel>>,
}

impl LmmDesign {
    pub fn n_rows(&self) -> usize {
        self.y.len()
    }

    pub fn n_groups(&self) -> usize {
        self.group_names.len()
    }
}

/// Dummy-codes every grid cell; groups are `model:dataset`.
pub fn build_design(grid: &ResultGrid, base: BaseLevels) -> Result<LmmDesign> {
    if grid.is_empty() {
        return Err(Error::invalid("empty grid"));
    }
    let levels: Vec<FactorLevel> = [Factor::IdSet, Factor::Delimiter, Factor::Separator]
        .into_iter()
        .flat_map(|f| f.levels())
        .filter(|l| !base.contains(*l))
        .collect();
    let p = 1 + levels.len();
    let n = grid.len();
    let mut x = DMatrix::zeros(n, p);
    let mut y = DVector::zeros(n);
    let mut group_names: Vec<String> = Vec::new();
    let mut groups = Vec::with_capacity(n);
    for (row, (key, value)) in grid.iter().enumerate() {
        y[row] = value.accuracy;
        x[(row, 0)] = 1.0;
        for (j, level) in levels.iter().enumerate() {
            if level.matches(&key.format) {
                x[(row, j + 1)] = 1.0;
            }
        }
        let g = format!("{}:{}", key.model, key.dataset);
        let idx = match group_names.iter().position(|n| *n == g) {
            Some(i) => i,
            None => {
                group_names.push(g);
                group_names.len() - 1
            }
        };
        groups.push(idx);
    }
    let mut columns = vec!["intercept".to_string()];
    columns.extend(levels.iter().map(|l| l.name().to_string()));
    let mut column_levels = vec![None];
    column_levels.extend(levels.into_iter().map(Some));
    Ok(LmmDesign {
        y,
        x,
        groups,
        group_names,
        columns,
        column_levels,
    })
}

/// Design row for a single format; used for predictions and tests.
pub fn design_row(format: PromptFormat, base: BaseLevels) -> Vec<f64> {
    let mut row = vec![1.0];
    for f in [Factor::IdSet, Factor::Delimiter, Factor::Separator] {
        for l in f.levels() {
            if !base.contains(l) {
                row.push(if l.matches(&format) { 1.0 } else { 0.0 });
            }
        }
    }
    row
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Criterion {
    #[default]
    Ml,
    Reml,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixedEffectEstimate {
    pub level: String,
    pub estimate: f64,
    pub se: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub significant: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LmmFit {
    pub criterion: Criterion,
    pub effects: Vec<FixedEffectEstimate>,
    pub sigma2_group: f64,
    pub sigma2_resid: f64,
    pub lambda: f64,
    /// Maximized criterion value (log-likelihood or restricted log-likelihood).
    pub log_likelihood: f64,
    pub n_obs: usize,
    pub n_groups: usize,
    pub evaluations: usize,
}

impl LmmFit {
    pub fn effect(&self, level: &str) -> Option<&FixedEffectEstimate> {
        self.effects.iter().find(|e| e.level == level)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["level", "estimate_pp", "se", "ci_lo", "ci_hi", "significant"])?;
        for e in &self.effects {
            w.write_record([
                e.level.clone(),
                format!("{:.6}", e.estimate),
                format!("{:.6}", e.se),
                format!("{:.6}", e.ci_lo),
                format!("{:.6}", e.ci_hi),
                e.significant.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

pub fn wald_ci(estimate: f64, se: f64, level: f64) -> Result<(f64, f64)> {
    if se.is_nan() || se < 0.0 {
        return Err(Error::domain(format!("standard error {se} must be non-negative")));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::domain(format!("confidence level {level} outside (0, 1)")));
    }
    let z = if level == 0.95 {
        Z95
    } else {
        Normal::new(0.0, 1.0)
            .expect("standard normal")
            .inverse_cdf(0.5 + level / 2.0)
    };
    Ok((estimate - z * se, estimate + z * se))
}

/// Per-group sufficient statistics.
struct GroupStats {
    n: f64,
    xtx: DMatrix<f64>,
    xt1: DVector<f64>,
    xty: DVector<f64>,
    sum_y: f64,
    yty: f64,
}

struct Prepared {
    groups: Vec<GroupStats>,
    n: usize,
    p: usize,
}

fn prepare(design: &LmmDesign) -> Result<Prepared> {
    let (n, p) = design.x.shape();
    if design.y.len() != n || design.groups.len() != n {
        return Err(Error::LengthMismatch {
            left: design.y.len(),
            right: n,
        });
    }
    if n <= p {
        return Err(Error::Fit(format!("{n} rows for {p} fixed effects")));
    }
    let g = design.group_names.len();
    let mut groups: Vec<GroupStats> = (0..g)
        .map(|_| GroupStats {
            n: 0.0,
            xtx: DMatrix::zeros(p, p),
            xt1: DVector::zeros(p),
            xty: DVector::zeros(p),
            sum_y: 0.0,
            yty: 0.0,
        })
        .collect();
    for i in 0..n {
        let gi = design.groups[i];
        let s = groups
            .get_mut(gi)
            .ok_or_else(|| Error::invalid(format!("row {i} has unknown group {gi}")))?;
        let xi = design.x.row(i).transpose();
        let yi = design.y[i];
        s.n += 1.0;
        s.xtx += &xi * xi.transpose();
        s.xt1 += &xi;
        s.xty += &xi * yi;
        s.sum_y += yi;
        s.yty += yi * yi;
    }
    Ok(Prepared { groups, n, p })
}

struct Profile {
    beta: DVector<f64>,
    a_inv: DMatrix<f64>,
    rhr: f64,
    log_det_h: f64,
    log_det_a: f64,
}

fn profile(prep: &Prepared, lambda: f64) -> Result<Profile> {
    let p = prep.p;
    let mut a = DMatrix::zeros(p, p);
    let mut b = DVector::zeros(p);
    let mut yhy = 0.0;
    let mut log_det_h = 0.0;
    for g in &prep.groups {
        let c = lambda / (1.0 + lambda * g.n);
        a += &g.xtx - (&g.xt1 * g.xt1.transpose()) * c;
        b += &g.xty - &g.xt1 * (c * g.sum_y);
        yhy += g.yty - c * g.sum_y * g.sum_y;
        log_det_h += (lambda * g.n).ln_1p();
    }
    let chol = a
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Fit("fixed-effects design is rank-deficient".into()))?;
    let beta = chol.solve(&b);
    let log_det_a = 2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
    let a_inv = chol.inverse();
    let rhr = (yhy - b.dot(&beta)).max(0.0);
    Ok(Profile {
        beta,
        a_inv,
        rhr,
        log_det_h,
        log_det_a,
    })
}

fn objective(prep: &Prepared, pr: &Profile, criterion: Criterion) -> f64 {
    let ln2pi = (2.0 * std::f64::consts::PI).ln();
    match criterion {
        Criterion::Ml => {
            let n = prep.n as f64;
            -0.5 * (n * (ln2pi + 1.0 + (pr.rhr / n).ln()) + pr.log_det_h)
        }
        Criterion::Reml => {
            let m = (prep.n - prep.p) as f64;
            -0.5 * (m * (ln2pi + 1.0 + (pr.rhr / m).ln()) + pr.log_det_h + pr.log_det_a)
        }
    }
}

fn residual_scale(prep: &Prepared, rhr: f64, criterion: Criterion) -> f64 {
    match criterion {
        Criterion::Ml => rhr / prep.n as f64,
        Criterion::Reml => rhr / (prep.n - prep.p) as f64,
    }
}

fn assemble(
    design: &LmmDesign,
    prep: &Prepared,
    pr: &Profile,
    lambda: f64,
    criterion: Criterion,
    log_likelihood: f64,
    evaluations: usize,
) -> Result<LmmFit> {
    let s2 = residual_scale(prep, pr.rhr, criterion);
    let mut effects = Vec::with_capacity(prep.p);
    for j in 0..prep.p {
        let se = (s2 * pr.a_inv[(j, j)]).max(0.0).sqrt();
        let est = pr.beta[j];
        let (lo, hi) = wald_ci(est, se, 0.95)?;
        effects.push(FixedEffectEstimate {
            level: design.columns[j].clone(),
            estimate: est,
            se,
            ci_lo: lo,
            ci_hi: hi,
            significant: lo > 0.0 || hi < 0.0,
        });
    }
    Ok(LmmFit {
        criterion,
        effects,
        sigma2_group: lambda * s2,
        sigma2_resid: s2,
        lambda,
        log_likelihood,
        n_obs: prep.n,
        n_groups: prep.groups.len(),
        evaluations,
    })
}

/// Generalized least squares at a fixed variance ratio. `lambda = 0` is
/// ordinary least squares.
pub fn fit_at_lambda(design: &LmmDesign, lambda: f64, criterion: Criterion) -> Result<LmmFit> {
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::domain(format!("variance ratio {lambda} must be finite and >= 0")));
    }
    let prep = prepare(design)?;
    let pr = profile(&prep, lambda)?;
    let ll = objective(&prep, &pr, criterion);
    assemble(design, &prep, &pr, lambda, criterion, ll, 1)
}

pub fn fit_lmm(design: &LmmDesign) -> Result<LmmFit> {
    fit_lmm_with(design, Criterion::Ml)
}

pub fn fit_lmm_with(design: &LmmDesign, criterion: Criterion) -> Result<LmmFit> {
    let prep = prepare(design)?;
    if prep.groups.iter().filter(|g| g.n > 0.0).count() < 2 {
        return Err(Error::Fit("a random intercept needs at least two groups".into()));
    }
    let y0 = design.y[0];
    if design.y.iter().all(|&v| v == y0) {
        let pr = profile(&prep, 0.0)?;
        let mut fit = assemble(design, &prep, &pr, 0.0, criterion, f64::INFINITY, 0)?;
        for (j, e) in fit.effects.iter_mut().enumerate() {
            let v = if j == 0 { y0 } else { 0.0 };
            *e = FixedEffectEstimate {
                level: e.level.clone(),
                estimate: v,
                se: 0.0,
                ci_lo: v,
                ci_hi: v,
                significant: v != 0.0,
            };
        }
        fit.sigma2_group = 0.0;
        fit.sigma2_resid = 0.0;
        return Ok(fit);
    }

    let mut evaluations = 0usize;
    let mut eval = |t: f64| -> Result<f64> {
        evaluations += 1;
        let pr = profile(&prep, 10f64.powf(t))?;
        Ok(objective(&prep, &pr, criterion))
    };

    let invphi = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (LOG10_LAMBDA_LO, LOG10_LAMBDA_HI);
    let mut c = b - invphi * (b - a);
    let mut d = a + invphi * (b - a);
    let (mut fc, mut fd) = (eval(c)?, eval(d)?);
    while b - a > SEARCH_TOL {
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - invphi * (b - a);
            fc = eval(c)?;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + invphi * (b - a);
            fd = eval(d)?;
        }
    }
    let t = 0.5 * (a + b);
    let edge = 1e-6;
    if t > LOG10_LAMBDA_HI - edge {
        return Err(Error::Fit(format!(
            "variance ratio search hit the upper end of [1e{LOG10_LAMBDA_LO}, 1e{LOG10_LAMBDA_HI}]"
        )));
    }
    let mut lambda = 10f64.powf(t);
    let mut pr = profile(&prep, lambda)?;
    let mut ll = objective(&prep, &pr, criterion);
    if t < LOG10_LAMBDA_LO + edge {
        let pr0 = profile(&prep, 0.0)?;
        let ll0 = objective(&prep, &pr0, criterion);
        evaluations += 1;
        if ll0 >= ll {
            lambda = 0.0;
            pr = pr0;
            ll = ll0;
        }
    }
    let evaluations = evaluations + 1;
    assemble(design, &prep, &pr, lambda, criterion, ll, evaluations)
}
