//! Confidence bins: questions ranked by the model's log-probability for
//! the gold ID under a reference format, split into top 20%, middle 60% and
//! bottom 20%, then scored under every other format.

use std::collections::{BTreeMap, HashMap};
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::backend::{BackendError, TokenLogprob};
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::metrics::exact_match;
use crate::prompt::PromptFormat;
use crate::run_matrix::RunRecord;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Bin {
    Top20,
    Middle60,
    Bottom20,
}

impl Bin {
    pub const ALL: [Bin; 3] = [Bin::Top20, Bin::Middle60, Bin::Bottom20];

    pub fn name(self) -> &'static str {
        match self {
            Bin::Top20 => "top20",
            Bin::Middle60 => "middle60",
            Bin::Bottom20 => "bottom20",
        }
    }
}

/// Log-probability of the gold ID at the first generated position. The
/// gold ID may appear whole or by its first character (character-level
/// tokenizers, multi-character Roman IDs). If the backend reported
/// alternatives but the gold ID is not among them the result is `-inf`.
pub fn gold_confidence(tokens: Option<&[TokenLogprob]>, gold_id: &str) -> Result<f64> {
    let first = tokens
        .and_then(|t| t.first())
        .ok_or_else(|| BackendError::Capability("record has no token log-probabilities".into()))?;
    let lead: String = gold_id.chars().take(1).collect();
    let candidates = std::iter::once((first.token.as_str(), first.logprob))
        .chain(first.top.iter().map(|t| (t.token.as_str(), t.logprob)));
    let mut by_lead = None;
    for (tok, lp) in candidates {
        let tok = tok.trim();
        if tok == gold_id {
            return Ok(lp);
        }
        if tok == lead && by_lead.is_none() {
            by_lead = Some(lp);
        }
    }
    Ok(by_lead.unwrap_or(f64::NEG_INFINITY))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinnedQuestion {
    pub id: String,
    pub confidence: f64,
    pub bin: Bin,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConfidenceBinning {
    pub reference: Option<PromptFormat>,
    /// Most confident first.
    pub questions: Vec<BinnedQuestion>,
}

impl ConfidenceBinning {
    pub fn bin_of(&self, id: &str) -> Option<Bin> {
        self.questions.iter().find(|q| q.id == id).map(|q| q.bin)
    }

    pub fn sizes(&self) -> (usize, usize, usize) {
        let count = |b| self.questions.iter().filter(|q| q.bin == b).count();
        (count(Bin::Top20), count(Bin::Middle60), count(Bin::Bottom20))
    }
}

/// Descending confidence, ties by id; `ceil(n/5)` top, `floor(n/5)` bottom.
pub fn bin_questions(confidences: &BTreeMap<String, f64>) -> Result<ConfidenceBinning> {
    let n = confidences.len();
    if n < 5 {
        return Err(Error::invalid(format!("binning needs at least 5 questions, got {n}")));
    }
    if confidences.values().any(|c| c.is_nan()) {
        return Err(Error::domain("confidence is NaN"));
    }
    let mut order: Vec<(&String, f64)> = confidences.iter().map(|(k, v)| (k, *v)).collect();
    order.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    let top = n.div_ceil(5);
    let bottom = n / 5;
    let questions = order
        .into_iter()
        .enumerate()
        .map(|(i, (id, c))| BinnedQuestion {
            id: id.clone(),
            confidence: c,
            bin: if i < top {
                Bin::Top20
            } else if i >= n - bottom {
                Bin::Bottom20
            } else {
                Bin::Middle60
            },
        })
        .collect();
    Ok(ConfidenceBinning {
        reference: None,
        questions,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinAccuracy {
    pub bin: Bin,
    pub format: PromptFormat,
    /// Instances (question rotations) scored.
    pub n: u64,
    pub accuracy: f64,
}

/// Accuracy per (bin, format) over all rotations of the bin's questions.
/// Every binned question must have every rotation under every format
/// present in `records`.
pub fn per_bin_accuracy(binning: &ConfidenceBinning, records: &[&RunRecord]) -> Result<Vec<BinAccuracy>> {
    let bins: HashMap<&str, Bin> = binning.questions.iter().map(|q| (q.id.as_str(), q.bin)).collect();
    // format -> question -> (rotations seen, option count, correct)
    let mut tally: BTreeMap<PromptFormat, HashMap<&str, (u64, usize, u64)>> = BTreeMap::new();
    for r in records {
        if !r.is_success() || !bins.contains_key(r.source_id.as_str()) {
            continue;
        }
        let ids = r.format.id_set.ids(r.option_count)?;
        let e = tally
            .entry(r.format)
            .or_default()
            .entry(r.source_id.as_str())
            .or_insert((0, r.option_count, 0));
        e.0 += 1;
        if exact_match(&r.output, &ids[r.gold_position]) {
            e.2 += 1;
        }
    }
    let mut out = Vec::new();
    for (format, per_q) in &tally {
        let mut missing = Vec::new();
        for q in &binning.questions {
            match per_q.get(q.id.as_str()) {
                Some((seen, k, _)) if *seen as usize == *k => {}
                _ => missing.push(format!("{}@{}", q.id, format)),
            }
        }
        if !missing.is_empty() {
            return Err(Error::MissingCells(missing));
        }
        for bin in Bin::ALL {
            let (mut n, mut correct) = (0u64, 0u64);
            for q in binning.questions.iter().filter(|q| q.bin == bin) {
                let (seen, _, c) = per_q[q.id.as_str()];
                n += seen;
                correct += c;
            }
            out.push(BinAccuracy {
                bin,
                format: *format,
                n,
                accuracy: if n == 0 { 0.0 } else { correct as f64 / n as f64 },
            });
        }
    }
    Ok(out)
}

/// Bins a dataset's questions using each question's rotation-0 record under
/// `reference`, then scores every format found for (model, dataset).
pub fn analyze(
    records: &[RunRecord],
    model: &str,
    dataset: &Dataset,
    reference: PromptFormat,
) -> Result<(ConfidenceBinning, Vec<BinAccuracy>)> {
    let mine: Vec<&RunRecord> = records
        .iter()
        .filter(|r| r.is_success() && r.model == model && r.dataset == dataset.name)
        .collect();
    let mut confidences = BTreeMap::new();
    for q in &dataset.records {
        let r = mine
            .iter()
            .find(|r| r.format == reference && r.source_id == q.id && r.rotation == 0)
            .ok_or_else(|| Error::MissingCells(vec![format!("{model}/{}/{reference}/{}#0", dataset.name, q.id)]))?;
        let gold = reference.id_set.ids(q.options.len())?[r.gold_position].clone();
        confidences.insert(q.id.clone(), gold_confidence(r.token_logprobs.as_deref(), &gold)?);
    }
    let mut binning = bin_questions(&confidences)?;
    binning.reference = Some(reference);
    let acc = per_bin_accuracy(&binning, &mine)?;
    Ok((binning, acc))
}

pub fn write_bin_csv<W: Write>(rows: &[BinAccuracy], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["bin", "format", "n", "accuracy"])?;
    for r in rows {
        w.write_record([
            r.bin.name().to_string(),
            r.format.key(),
            r.n.to_string(),
            format!("{:.6}", r.accuracy),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::TopLogprob;

    fn conf(values: &[f64]) -> BTreeMap<String, f64> {
        values
            .iter()
            .enumerate()
            .map(|(i, v)| (format!("q{i:02}"), *v))
            .collect()
    }

    #[test]
    fn bin_sizes() {
        assert_eq!(bin_questions(&conf(&[0.0; 10])).unwrap().sizes(), (2, 6, 2));
        assert_eq!(bin_questions(&conf(&[0.0; 11])).unwrap().sizes(), (3, 6, 2));
        assert_eq!(bin_questions(&conf(&[0.0; 5])).unwrap().sizes(), (1, 3, 1));
        assert!(bin_questions(&conf(&[0.0; 4])).is_err());
    }

    #[test]
    fn ties_break_by_id() {
        let b = bin_questions(&conf(&[1.0; 10])).unwrap();
        let ids: Vec<&str> = b.questions.iter().map(|q| q.id.as_str()).collect();
        assert_eq!(ids[..2], ["q00", "q01"]);
        assert_eq!(b.bin_of("q09"), Some(Bin::Bottom20));
    }

    #[test]
    fn confidence_lookup() {
        let t = TokenLogprob {
            token: "B".into(),
            logprob: 0.9f64.ln(),
            top: vec![
                TopLogprob { token: "B".into(), logprob: 0.9f64.ln() },
                TopLogprob { token: "I".into(), logprob: 0.05f64.ln() },
            ],
        };
        let toks = [t];
        assert_eq!(gold_confidence(Some(&toks), "B").unwrap(), 0.9f64.ln());
        assert_eq!(gold_confidence(Some(&toks), "III").unwrap(), 0.05f64.ln());
        assert_eq!(gold_confidence(Some(&toks), "D").unwrap(), f64::NEG_INFINITY);
        assert!(gold_confidence(None, "B").is_err());
    }
}
