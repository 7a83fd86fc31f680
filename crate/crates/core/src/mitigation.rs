//! Position-bias mitigation methods and the comparison against the
//! all-format average.
//!
//! Three alternatives to plain single-format accuracy:
//! PIA reweights per-position correctness by selection counts, PriDe divides
//! observed option-ID probabilities by a calibration prior, and CP-LN picks
//! the option text with the lowest perplexity given only the question.
//! Methods are compared by how well their model ranking agrees with the
//! ranking by mean accuracy over all 48 formats (the pseudo ground truth).

use std::collections::{BTreeMap, HashMap};
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::backend::TokenLogprob;
use crate::dataset::{benchmark, Dataset};
use crate::error::{Error, Result};
use crate::metrics::{competition_ranks, exact_match, ResultGrid};
use crate::prompt::{OptionIdSet, PromptFormat};
use crate::run_matrix::{ClozeRecord, RunRecord};

/// Floor applied to prior entries before renormalization.
pub const PRIOR_FLOOR: f64 = 1e-12;

/// `(1/M) Σ (C_i/Pr_i)(C_i/N)`; a position never selected contributes 0.
pub fn pia(correct: &[u64], selected: &[u64], n: u64, m: usize) -> Result<f64> {
    if correct.len() != selected.len() {
        return Err(Error::LengthMismatch {
            left: correct.len(),
            right: selected.len(),
        });
    }
    if m < 2 {
        return Err(Error::domain("PIA needs at least two options"));
    }
    if n == 0 {
        return Err(Error::domain("PIA needs at least one question"));
    }
    let total: u64 = correct.iter().sum();
    if total > n {
        return Err(Error::Inconsistent(format!("{total} correct answers out of {n}")));
    }
    let mut sum = 0.0;
    for (i, (&c, &p)) in correct.iter().zip(selected).enumerate() {
        if c > p {
            return Err(Error::Inconsistent(format!(
                "position {i}: {c} correct but only {p} selected"
            )));
        }
        if p > 0 {
            sum += (c as f64 / p as f64) * (c as f64 / n as f64);
        }
    }
    Ok(sum / m as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorVector(pub Vec<f64>);

impl PriorVector {
    pub fn uniform(k: usize) -> Self {
        PriorVector(vec![1.0 / k as f64; k])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Mean of per-ID probabilities over the calibration observations, floored
/// at `floor` and renormalized.
pub fn pride_prior_with_floor(observations: &[Vec<f64>], floor: f64) -> Result<PriorVector> {
    let Some(first) = observations.first() else {
        return Err(Error::invalid("no calibration observations"));
    };
    let k = first.len();
    if observations.iter().any(|o| o.len() != k) {
        let mut counts: Vec<usize> = observations.iter().map(Vec::len).collect();
        counts.sort_unstable();
        counts.dedup();
        return Err(Error::MixedOptionCounts(counts));
    }
    if k < 2 {
        return Err(Error::domain("prior needs at least two options"));
    }
    let mut mean = vec![0.0; k];
    for o in observations {
        if o.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(Error::domain("observed probabilities must be finite and non-negative"));
        }
        for (m, p) in mean.iter_mut().zip(o) {
            *m += p;
        }
    }
    let n = observations.len() as f64;
    for m in &mut mean {
        *m = (*m / n).max(floor);
    }
    let total: f64 = mean.iter().sum();
    Ok(PriorVector(mean.into_iter().map(|m| m / total).collect()))
}

pub fn pride_prior(observations: &[Vec<f64>]) -> Result<PriorVector> {
    pride_prior_with_floor(observations, PRIOR_FLOOR)
}

/// Index maximizing observed/prior; ties go to the lowest index.
pub fn pride_debias(observed: &[f64], prior: &PriorVector) -> Result<usize> {
    if observed.len() != prior.len() {
        return Err(Error::LengthMismatch {
            left: observed.len(),
            right: prior.len(),
        });
    }
    if observed.is_empty() {
        return Err(Error::invalid("no options to choose from"));
    }
    Ok(argbest(observed.iter().zip(&prior.0).map(|(o, p)| o / p), |a, b| a > b))
}

pub fn perplexity(logprobs: &[f64]) -> Result<f64> {
    if logprobs.is_empty() {
        return Err(Error::invalid("perplexity of an empty sequence"));
    }
    if logprobs.iter().any(|l| !l.is_finite()) {
        return Err(Error::domain("log-probabilities must be finite"));
    }
    let mean = logprobs.iter().sum::<f64>() / logprobs.len() as f64;
    Ok((-mean).exp())
}

/// Index of the lowest perplexity; ties go to the lowest index.
pub fn cp_ln_select(perplexities: &[f64]) -> Result<usize> {
    if perplexities.len() < 2 {
        return Err(Error::invalid("cloze selection needs at least two options"));
    }
    Ok(argbest(perplexities.iter().copied(), |a, b| a < b))
}

fn argbest(values: impl Iterator<Item = f64>, better: impl Fn(f64, f64) -> bool) -> usize {
    let mut best: Option<(usize, f64)> = None;
    for (i, v) in values.enumerate() {
        match best {
            Some((_, b)) if !better(v, b) => {}
            _ => best = Some((i, v)),
        }
    }
    best.map_or(0, |(i, _)| i)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PseudoGt {
    pub models: Vec<String>,
    /// Mean accuracy over the 48 formats, in percent.
    pub accuracy: Vec<f64>,
    pub ranks: Vec<usize>,
}

pub fn pseudo_gt(grid: &ResultGrid, dataset: &str) -> Result<PseudoGt> {
    let models = grid.models_for(dataset);
    if models.is_empty() {
        return Err(Error::MissingCells(vec![format!("*/{dataset}/*")]));
    }
    let mut accuracy = Vec::with_capacity(models.len());
    for m in &models {
        let cells = grid.complete_cells(m, dataset)?;
        accuracy.push(cells.iter().map(|(_, v)| v.accuracy).sum::<f64>() / cells.len() as f64);
    }
    let ranks = competition_ranks(&accuracy);
    Ok(PseudoGt {
        models,
        accuracy,
        ranks,
    })
}

/// Average ranks (1-based, ascending values), ties share the mean position.
fn average_ranks(x: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut out = vec![0.0; x.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && x[idx[j + 1]] == x[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            out[k] = avg;
        }
        i = j + 1;
    }
    out
}

/// Spearman's rho: Pearson correlation of average ranks. Without ties this
/// equals `1 - 6 Σd² / (n(n²-1))`. Undefined (NaN) if either side is constant.
pub fn spearman(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    if a.len() < 2 {
        return Err(Error::invalid("Spearman correlation needs at least two items"));
    }
    let (ra, rb) = (average_ranks(a), average_ranks(b));
    let n = a.len() as f64;
    let (ma, mb) = (ra.iter().sum::<f64>() / n, rb.iter().sum::<f64>() / n);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in ra.iter().zip(&rb) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    Ok(sab / (saa * sbb).sqrt())
}

pub fn spearman_ranks(a: &[usize], b: &[usize]) -> Result<f64> {
    let f = |r: &[usize]| r.iter().map(|&x| x as f64).collect::<Vec<_>>();
    spearman(&f(a), &f(b))
}

pub fn correctly_ranked(method: &[usize], reference: &[usize]) -> Result<usize> {
    if method.len() != reference.len() {
        return Err(Error::LengthMismatch {
            left: method.len(),
            right: reference.len(),
        });
    }
    Ok(method.iter().zip(reference).filter(|(a, b)| a == b).count())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    PseudoGt,
    Vanilla,
    Pia,
    Pride,
    CpLn,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::PseudoGt,
        Method::Vanilla,
        Method::Pia,
        Method::Pride,
        Method::CpLn,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::PseudoGt => "pseudo_gt",
            Method::Vanilla => "vanilla",
            Method::Pia => "pia",
            Method::Pride => "pride",
            Method::CpLn => "cp_ln",
        }
    }

    /// Requests needed, given single and circularly expanded question counts.
    pub fn complexity(self, single: u64, circular: u64, formats: u64) -> u64 {
        match self {
            Method::PseudoGt => circular * formats,
            Method::Vanilla | Method::Pride => single,
            Method::Pia | Method::CpLn => circular,
        }
    }
}

impl std::str::FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown method `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MethodColumn {
    pub method: Method,
    /// Accuracy per model in percent; `None` when the method does not apply.
    pub accuracy: Vec<Option<f64>>,
    pub ranks: Vec<Option<usize>>,
    pub complexity: Option<u64>,
    pub spearman: Option<f64>,
    pub correctly_ranked: Option<usize>,
    /// Why the method is missing, if it is.
    pub note: Option<String>,
}

/// Method, per-model accuracy (`None` if not applicable), complexity, note.
pub type MethodInput = (Method, Option<Vec<f64>>, Option<u64>, Option<String>);

#[derive(Debug, Clone, PartialEq)]
pub struct Scorecard {
    pub dataset: String,
    pub models: Vec<String>,
    pub columns: Vec<MethodColumn>,
}

impl Scorecard {
    pub fn column(&self, method: Method) -> Option<&MethodColumn> {
        self.columns.iter().find(|c| c.method == method)
    }

    /// Assembles a scorecard; the reference column supplies the ranks the
    /// others are compared with.
    pub fn build(
        dataset: &str,
        models: Vec<String>,
        reference: Vec<f64>,
        methods: Vec<MethodInput>,
        reference_complexity: Option<u64>,
    ) -> Result<Scorecard> {
        if reference.len() != models.len() {
            return Err(Error::LengthMismatch {
                left: reference.len(),
                right: models.len(),
            });
        }
        let ref_ranks = competition_ranks(&reference);
        let mut columns = vec![MethodColumn {
            method: Method::PseudoGt,
            accuracy: reference.iter().copied().map(Some).collect(),
            ranks: ref_ranks.iter().copied().map(Some).collect(),
            complexity: reference_complexity,
            spearman: None,
            correctly_ranked: None,
            note: None,
        }];
        for (method, acc, complexity, note) in methods {
            match acc {
                Some(acc) => {
                    if acc.len() != models.len() {
                        return Err(Error::LengthMismatch {
                            left: acc.len(),
                            right: models.len(),
                        });
                    }
                    let ranks = competition_ranks(&acc);
                    columns.push(MethodColumn {
                        method,
                        spearman: Some(spearman_ranks(&ranks, &ref_ranks)?),
                        correctly_ranked: Some(correctly_ranked(&ranks, &ref_ranks)?),
                        accuracy: acc.into_iter().map(Some).collect(),
                        ranks: ranks.into_iter().map(Some).collect(),
                        complexity,
                        note,
                    });
                }
                None => columns.push(MethodColumn {
                    method,
                    accuracy: vec![None; models.len()],
                    ranks: vec![None; models.len()],
                    complexity: None,
                    spearman: None,
                    correctly_ranked: None,
                    note,
                }),
            }
        }
        Ok(Scorecard {
            dataset: dataset.to_string(),
            models,
            columns,
        })
    }

    /// One row per (method, model) plus the method-level statistics.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record([
            "dataset",
            "method",
            "model",
            "accuracy",
            "rank",
            "complexity",
            "correlation",
            "correctly_ranked",
            "note",
        ])?;
        let opt = |v: Option<String>| v.unwrap_or_default();
        for c in &self.columns {
            for (i, m) in self.models.iter().enumerate() {
                w.write_record([
                    self.dataset.clone(),
                    c.method.name().to_string(),
                    m.clone(),
                    opt(c.accuracy[i].map(|a| format!("{a:.4}"))),
                    opt(c.ranks[i].map(|r| r.to_string())),
                    opt(c.complexity.map(|x| x.to_string())),
                    opt(c.spearman.map(|s| format!("{s:.4}"))),
                    opt(c.correctly_ranked.map(|k| format!("{k}/{}", self.models.len()))),
                    opt(c.note.clone()),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Printed method accuracies, as shipped in the mitigation fixture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PublishedRow {
    pub dataset: String,
    pub model: String,
    pub method: Method,
    pub accuracy: f64,
    pub rank: usize,
}

pub fn read_published<R: std::io::Read>(reader: R) -> Result<Vec<PublishedRow>> {
    let mut rdr = csv::Reader::from_reader(reader);
    let mut out = Vec::new();
    for row in rdr.deserialize() {
        out.push(row?);
    }
    Ok(out)
}

/// Scorecard from printed method accuracies. The reference is the printed
/// pseudo-GT column unless `reference` is given (e.g. recomputed from the
/// grid). Methods without rows are reported as not applicable.
pub fn published_scorecard(
    rows: &[PublishedRow],
    dataset: &str,
    reference: Option<&PseudoGt>,
) -> Result<Scorecard> {
    let mut by_method: BTreeMap<Method, BTreeMap<String, f64>> = BTreeMap::new();
    for r in rows.iter().filter(|r| r.dataset == dataset) {
        by_method
            .entry(r.method)
            .or_default()
            .insert(r.model.clone(), r.accuracy);
    }
    let printed_gt = by_method
        .get(&Method::PseudoGt)
        .ok_or_else(|| Error::invalid(format!("no pseudo_gt rows for {dataset}")))?;
    let models: Vec<String> = printed_gt.keys().cloned().collect();
    let ref_acc = match reference {
        Some(gt) => models
            .iter()
            .map(|m| {
                gt.models
                    .iter()
                    .position(|x| x == m)
                    .map(|i| gt.accuracy[i])
                    .ok_or_else(|| Error::MissingCells(vec![format!("{m}/{dataset}")]))
            })
            .collect::<Result<Vec<_>>>()?,
        None => models.iter().map(|m| printed_gt[m]).collect(),
    };
    let info = benchmark(dataset);
    let mut methods = Vec::new();
    for method in [Method::Vanilla, Method::Pia, Method::Pride, Method::CpLn] {
        let column = by_method.get(&method);
        let acc = column
            .map(|c| {
                models
                    .iter()
                    .map(|m| {
                        c.get(m)
                            .copied()
                            .ok_or_else(|| Error::MissingCells(vec![format!("{m}/{dataset}/{}", method.name())]))
                    })
                    .collect::<Result<Vec<f64>>>()
            })
            .transpose()?;
        let note = acc
            .is_none()
            .then(|| "not applicable: mixed option counts".to_string());
        let complexity = match (&acc, info) {
            (Some(_), Some(b)) => Some(method.complexity(b.single as u64, b.circular as u64, 48)),
            _ => None,
        };
        methods.push((method, acc, complexity, note));
    }
    let ref_complexity = info.map(|b| Method::PseudoGt.complexity(b.single as u64, b.circular as u64, 48));
    Scorecard::build(dataset, models, ref_acc, methods, ref_complexity)
}

/// Per-ID probabilities from the first generated token's alternatives,
/// renormalized over the IDs. IDs sharing a first character share its mass.
pub fn observed_id_probabilities(tokens: &[TokenLogprob], ids: &[String]) -> Option<Vec<f64>> {
    let first = tokens.first()?;
    let mut lookup: HashMap<&str, f64> = first
        .top
        .iter()
        .map(|t| (t.token.trim(), t.logprob.exp()))
        .collect();
    lookup
        .entry(first.token.trim())
        .or_insert_with(|| first.logprob.exp());
    let raw: Vec<f64> = ids
        .iter()
        .map(|id| {
            let lead: String = id.chars().take(1).collect();
            lookup
                .get(id.as_str())
                .or_else(|| lookup.get(lead.as_str()))
                .copied()
                .unwrap_or(0.0)
        })
        .collect();
    let total: f64 = raw.iter().sum();
    (total > 0.0).then(|| raw.into_iter().map(|p| p / total).collect())
}

/// Inputs for a live scorecard on one dataset.
pub struct LiveInputs<'a> {
    pub dataset: &'a Dataset,
    /// Grid with all 48 formats for every model, for the reference ranking.
    pub grid: &'a ResultGrid,
    pub records: &'a [RunRecord],
    pub cloze: &'a [ClozeRecord],
    /// Format used for the single-format methods.
    pub format: PromptFormat,
    /// Dataset whose circular records under `format` estimate the PriDe prior.
    pub calibration: Option<&'a Dataset>,
}

fn records_for<'r>(
    records: &'r [RunRecord],
    model: &str,
    dataset: &str,
    format: PromptFormat,
) -> Vec<&'r RunRecord> {
    records
        .iter()
        .filter(|r| r.is_success() && r.model == model && r.dataset == dataset && r.format == format)
        .collect()
}

fn ids_for(set: OptionIdSet, k: usize) -> Result<Vec<String>> {
    set.ids(k)
}

/// Plain accuracy of rotation-0 answers under one format, in percent.
fn vanilla_accuracy(recs: &[&RunRecord], dataset: &Dataset, format: PromptFormat) -> Result<f64> {
    let mut by_id: HashMap<&str, &RunRecord> = HashMap::new();
    for r in recs.iter().filter(|r| r.rotation == 0) {
        by_id.insert(&r.source_id, r);
    }
    let mut correct = 0usize;
    for q in &dataset.records {
        let r = by_id
            .get(q.id.as_str())
            .ok_or_else(|| Error::MissingCells(vec![format!("{}#0", q.id)]))?;
        let ids = ids_for(format.id_set, q.options.len())?;
        if exact_match(&r.output, &ids[q.gold_index]) {
            correct += 1;
        }
    }
    Ok(100.0 * correct as f64 / dataset.records.len() as f64)
}

fn uniform_option_count(dataset: &Dataset) -> Result<usize> {
    let counts = dataset.option_counts();
    match counts.as_slice() {
        [k] => Ok(*k),
        _ => Err(Error::MixedOptionCounts(counts)),
    }
}

fn pia_live(recs: &[&RunRecord], dataset: &Dataset, format: PromptFormat) -> Result<f64> {
    let k = uniform_option_count(dataset)?;
    let ids = ids_for(format.id_set, k)?;
    let (mut c, mut p) = (vec![0u64; k], vec![0u64; k]);
    for r in recs {
        if let Some(pos) = ids.iter().position(|id| id == r.output.trim()) {
            p[pos] += 1;
            if pos == r.gold_position {
                c[pos] += 1;
            }
        }
    }
    let n = dataset.records.len() as u64 * k as u64;
    if recs.len() as u64 != n {
        return Err(Error::IncompleteGrid(format!(
            "PIA needs {n} circular records, found {}",
            recs.len()
        )));
    }
    Ok(100.0 * pia(&c, &p, n, k)?)
}

fn pride_live(
    eval: &[&RunRecord],
    calib: &[&RunRecord],
    dataset: &Dataset,
    calib_ds: &Dataset,
    format: PromptFormat,
) -> Result<f64> {
    let k = uniform_option_count(dataset)?;
    let kc = uniform_option_count(calib_ds)?;
    if k != kc {
        return Err(Error::MixedOptionCounts(vec![k.min(kc), k.max(kc)]));
    }
    let ids = ids_for(format.id_set, k)?;
    let mut observations = Vec::new();
    for r in calib {
        let tokens = r.token_logprobs.as_deref().ok_or_else(|| {
            Error::Backend(crate::backend::BackendError::Capability(
                "PriDe needs token log-probabilities".into(),
            ))
        })?;
        if let Some(p) = observed_id_probabilities(tokens, &ids) {
            observations.push(p);
        }
    }
    let prior = pride_prior(&observations)?;
    let mut by_id: HashMap<&str, &RunRecord> = HashMap::new();
    for r in eval.iter().filter(|r| r.rotation == 0) {
        by_id.insert(&r.source_id, r);
    }
    let mut correct = 0usize;
    for q in &dataset.records {
        let r = by_id
            .get(q.id.as_str())
            .ok_or_else(|| Error::MissingCells(vec![format!("{}#0", q.id)]))?;
        let observed = r
            .token_logprobs
            .as_deref()
            .and_then(|t| observed_id_probabilities(t, &ids));
        if let Some(observed) = observed {
            if pride_debias(&observed, &prior)? == q.gold_index {
                correct += 1;
            }
        }
    }
    Ok(100.0 * correct as f64 / dataset.records.len() as f64)
}

fn cp_ln_live(cloze: &[ClozeRecord], model: &str, dataset: &Dataset) -> Result<f64> {
    let mut scores: HashMap<(&str, usize), &[f64]> = HashMap::new();
    for c in cloze
        .iter()
        .filter(|c| c.error.is_none() && c.model == model && c.dataset == dataset.name)
    {
        scores.insert((c.source_id.as_str(), c.option_index), &c.logprobs);
    }
    let mut correct = 0usize;
    for q in &dataset.records {
        let ppl = (0..q.options.len())
            .map(|i| {
                let lp = scores
                    .get(&(q.id.as_str(), i))
                    .ok_or_else(|| Error::MissingCells(vec![format!("{model}/{}/{}#{i}", dataset.name, q.id)]))?;
                perplexity(lp)
            })
            .collect::<Result<Vec<f64>>>()?;
        if cp_ln_select(&ppl)? == q.gold_index {
            correct += 1;
        }
    }
    Ok(100.0 * correct as f64 / dataset.records.len() as f64)
}

/// Computes every method from run and cloze records. A method that cannot
/// be applied to the dataset is reported with a note instead of failing.
pub fn live_scorecard(inputs: &LiveInputs<'_>) -> Result<Scorecard> {
    let ds = inputs.dataset;
    let gt = pseudo_gt(inputs.grid, &ds.name)?;
    let single = ds.len() as u64;
    let circular = crate::dataset::expanded_count(ds) as u64;
    let calib_ds = inputs.calibration.unwrap_or(ds);

    type Compute<'f> = Box<dyn Fn(&str) -> Result<f64> + 'f>;
    let vanilla: Compute = Box::new(|m| {
        vanilla_accuracy(&records_for(inputs.records, m, &ds.name, inputs.format), ds, inputs.format)
    });
    let pia_f: Compute = Box::new(|m| pia_live(&records_for(inputs.records, m, &ds.name, inputs.format), ds, inputs.format));
    let pride_f: Compute = Box::new(|m| {
        pride_live(
            &records_for(inputs.records, m, &ds.name, inputs.format),
            &records_for(inputs.records, m, &calib_ds.name, inputs.format),
            ds,
            calib_ds,
            inputs.format,
        )
    });
    let cp_ln_f: Compute = Box::new(|m| cp_ln_live(inputs.cloze, m, ds));

    let mut methods = Vec::new();
    for (method, f) in [
        (Method::Vanilla, vanilla),
        (Method::Pia, pia_f),
        (Method::Pride, pride_f),
        (Method::CpLn, cp_ln_f),
    ] {
        let result: Result<Vec<f64>> = gt.models.iter().map(|m| f(m)).collect();
        match result {
            Ok(acc) => {
                let note = (method == Method::Pia)
                    .then(|| "PIA as printed; a perfect balanced model scores 100/M".to_string());
                methods.push((method, Some(acc), Some(method.complexity(single, circular, 48)), note));
            }
            Err(Error::MixedOptionCounts(counts)) => methods.push((
                method,
                None,
                None,
                Some(format!("not applicable: option counts {counts:?}")),
            )),
            Err(e) => return Err(e),
        }
    }
    Scorecard::build(
        &ds.name,
        gt.models.clone(),
        gt.accuracy.clone(),
        methods,
        Some(Method::PseudoGt.complexity(single, circular, 48)),
    )
}
