//! Multiple-choice datasets and circular expansion.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::prompt::{
    OptionDelimiter, OptionIdSet, OptionSeparator, PromptFormat, MAX_OPTIONS, MIN_OPTIONS,
};

/// One multiple-choice item. Serialized as one line of the dataset file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuestionRecord {
    pub id: String,
    #[serde(rename = "image", default, skip_serializing_if = "Option::is_none")]
    pub image_ref: Option<String>,
    pub question: String,
    pub options: Vec<String>,
    #[serde(rename = "answer_index")]
    pub gold_index: usize,
}

impl QuestionRecord {
    pub fn validate(&self) -> Result<()> {
        let k = self.options.len();
        if self.id.is_empty() {
            return Err(Error::invalid("record with empty id"));
        }
        if !(MIN_OPTIONS..=MAX_OPTIONS).contains(&k) {
            return Err(Error::invalid(format!(
                "record `{}` has {k} options, expected {MIN_OPTIONS}..={MAX_OPTIONS}",
                self.id
            )));
        }
        if self.gold_index >= k {
            return Err(Error::invalid(format!(
                "record `{}` has answer_index {} but only {k} options",
                self.id, self.gold_index
            )));
        }
        if self.question.trim().is_empty() {
            return Err(Error::invalid(format!("record `{}` has an empty question", self.id)));
        }
        let mut seen = HashSet::new();
        for opt in &self.options {
            if opt.is_empty() {
                return Err(Error::invalid(format!("record `{}` has an empty option", self.id)));
            }
            if !seen.insert(opt.as_str()) {
                return Err(Error::invalid(format!(
                    "record `{}` repeats option `{opt}`",
                    self.id
                )));
            }
        }
        Ok(())
    }

    pub fn option_count(&self) -> usize {
        self.options.len()
    }

    pub fn gold_text(&self) -> &str {
        &self.options[self.gold_index]
    }
}

/// A record with its options rotated left by `rotation`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RotatedInstance {
    pub source_id: String,
    pub rotation: usize,
    pub options: Vec<String>,
    pub gold_position: usize,
}

pub fn circular_expand(record: &QuestionRecord) -> Vec<RotatedInstance> {
    let k = record.options.len();
    (0..k)
        .map(|rotation| {
            let mut options = record.options.clone();
            options.rotate_left(rotation);
            RotatedInstance {
                source_id: record.id.clone(),
                rotation,
                options,
                gold_position: (record.gold_index + k - rotation) % k,
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dataset {
    pub name: String,
    pub records: Vec<QuestionRecord>,
}

impl Dataset {
    /// Builds a dataset, validating every record and id uniqueness.
    pub fn new(name: impl Into<String>, records: Vec<QuestionRecord>) -> Result<Self> {
        let mut ids = HashSet::new();
        for r in &records {
            r.validate()?;
            if !ids.insert(r.id.as_str()) {
                return Err(Error::DuplicateId(r.id.clone()));
            }
        }
        Ok(Dataset {
            name: name.into(),
            records,
        })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&QuestionRecord> {
        self.records.iter().find(|r| r.id == id)
    }

    /// Distinct option counts, ascending.
    pub fn option_counts(&self) -> Vec<usize> {
        let mut counts: Vec<usize> = self.records.iter().map(|r| r.options.len()).collect();
        counts.sort_unstable();
        counts.dedup();
        counts
    }

    pub fn max_option_count(&self) -> usize {
        self.records.iter().map(|r| r.options.len()).max().unwrap_or(0)
    }
}

pub fn expanded_count(dataset: &Dataset) -> usize {
    dataset.records.iter().map(|r| r.options.len()).sum()
}

/// Loads a line-delimited dataset. The dataset is named after the file stem.
pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "dataset".to_string());
    load_dataset_named(path, name)
}

pub fn load_dataset_named(path: &Path, name: impl Into<String>) -> Result<Dataset> {
    let reader = BufReader::new(File::open(path)?);
    let mut records = Vec::new();
    let mut ids = HashSet::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line: lineno,
            message,
        };
        let record: QuestionRecord =
            serde_json::from_str(&line).map_err(|e| parse_err(e.to_string()))?;
        record.validate().map_err(|e| parse_err(e.to_string()))?;
        if !ids.insert(record.id.clone()) {
            return Err(Error::DuplicateId(record.id));
        }
        records.push(record);
    }
    Ok(Dataset {
        name: name.into(),
        records,
    })
}

/// Per-benchmark facts: sizes and the format each benchmark ships with.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BenchmarkInfo {
    pub name: &'static str,
    pub single: usize,
    pub circular: usize,
    pub standard_format: PromptFormat,
}

pub const BENCHMARKS: [BenchmarkInfo; 5] = [
    BenchmarkInfo {
        name: "A-OKVQA",
        single: 1145,
        circular: 4580,
        standard_format: PromptFormat::new(
            OptionIdSet::Lowercase,
            OptionDelimiter::DoubleBrackets,
            OptionSeparator::LineBreak,
        ),
    },
    BenchmarkInfo {
        name: "HRBench-4K",
        single: 200,
        circular: 800,
        standard_format: PromptFormat::new(
            OptionIdSet::Uppercase,
            OptionDelimiter::Dot,
            OptionSeparator::LineBreak,
        ),
    },
    BenchmarkInfo {
        name: "MMBench",
        single: 1292,
        circular: 4876,
        standard_format: PromptFormat::new(
            OptionIdSet::Uppercase,
            OptionDelimiter::Dot,
            OptionSeparator::Semicolon,
        ),
    },
    BenchmarkInfo {
        name: "MME-RealWorld-Lite",
        single: 1919,
        circular: 9595,
        standard_format: PromptFormat::new(
            OptionIdSet::Uppercase,
            OptionDelimiter::DoubleBrackets,
            OptionSeparator::LineBreak,
        ),
    },
    BenchmarkInfo {
        name: "V*Bench",
        single: 192,
        circular: 596,
        standard_format: PromptFormat::new(
            OptionIdSet::Uppercase,
            OptionDelimiter::Dot,
            OptionSeparator::LineBreak,
        ),
    },
];

/// Looks a benchmark up by name, ignoring case and punctuation.
pub fn benchmark(name: &str) -> Option<&'static BenchmarkInfo> {
    let squash = |s: &str| {
        s.chars()
            .filter(|c| c.is_ascii_alphanumeric())
            .collect::<String>()
            .to_ascii_lowercase()
    };
    let wanted = squash(name);
    BENCHMARKS.iter().find(|b| squash(b.name) == wanted)
}

/// Synthetic dataset with the given option counts; `counts[i]` options for
/// record `i`. Gold answers cycle through positions.
pub fn synthetic(name: &str, counts: &[usize]) -> Result<Dataset> {
    let records = counts
        .iter()
        .enumerate()
        .map(|(i, &k)| QuestionRecord {
            id: format!("{name}-{i:05}"),
            image_ref: None,
            question: format!("Synthetic question {i} of {name}?"),
            options: (0..k).map(|j| format!("option {j} for item {i}")).collect(),
            gold_index: i % k.max(1),
        })
        .collect();
    Dataset::new(name, records)
}

/// Option counts reproducing `circular` instances over `single` records,
/// using two adjacent-enough counts (`hi` for the first records, `lo` after).
pub fn option_counts_for(single: usize, circular: usize) -> Result<Vec<usize>> {
    if single > 0 && circular.is_multiple_of(single) {
        return Ok(vec![circular / single; single]);
    }
    for hi in (3..=5).rev() {
        for lo in 2..hi {
            // a*hi + (single-a)*lo = circular
            let rest = circular as i64 - (single * lo) as i64;
            let step = (hi - lo) as i64;
            if rest >= 0 && rest % step == 0 && rest / step <= single as i64 {
                let a = (rest / step) as usize;
                let mut v = vec![hi; a];
                v.extend(std::iter::repeat_n(lo, single - a));
                return Ok(v);
            }
        }
    }
    Err(Error::InvalidInput(format!(
        "cannot split {circular} instances over {single} records"
    )))
}

/// Synthetic stand-in with a benchmark's published single and circular sizes.
pub fn benchmark_shaped(info: &BenchmarkInfo) -> Result<Dataset> {
    synthetic(info.name, &option_counts_for(info.single, info.circular)?)
}
