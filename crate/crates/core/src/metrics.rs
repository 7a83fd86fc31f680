//! Accuracy, coverage, answer frequencies, ranks and per-level deviations.
//!
//! [`EvalCell`] holds fractions in `[0, 1]` as computed from raw records.
//! [`ResultGrid`] holds percentages, which is how the published tables and
//! the grid CSV files store them.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::prompt::{
    enumerate_formats, FactorLevel, OptionDelimiter, OptionIdSet, OptionSeparator, PromptFormat,
};

/// Default coverage threshold for coverage-neutral analyses.
pub const COVERAGE_THRESHOLD: f64 = 0.75;

pub fn exact_match(output: &str, gold_id: &str) -> bool {
    output.trim() == gold_id
}

/// Position of the trimmed output in `ids`, if it is a valid ID.
pub fn in_scheme<S: AsRef<str>>(output: &str, ids: &[S]) -> Option<usize> {
    let t = output.trim();
    ids.iter().position(|id| id.as_ref() == t)
}

pub fn coverage<O: AsRef<str>, S: AsRef<str>>(outputs: &[O], ids: &[S]) -> Result<f64> {
    if outputs.is_empty() {
        return Err(Error::invalid("coverage of an empty evaluation set"));
    }
    let hits = outputs
        .iter()
        .filter(|o| in_scheme(o.as_ref(), ids).is_some())
        .count();
    Ok(hits as f64 / outputs.len() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnswerFrequencies {
    /// Normalized frequency per position; `None` where the position never appeared.
    pub values: Vec<Option<f64>>,
    /// No in-scheme answers at all; rendered grey.
    pub no_valid_answers: bool,
}

pub fn answer_frequencies(selected: &[u64], present: &[u64]) -> Result<AnswerFrequencies> {
    if selected.len() != present.len() {
        return Err(Error::LengthMismatch {
            left: selected.len(),
            right: present.len(),
        });
    }
    let raw: Vec<Option<f64>> = selected
        .iter()
        .zip(present)
        .map(|(&s, &n)| (n > 0).then(|| s as f64 / n as f64))
        .collect();
    let total: f64 = raw.iter().flatten().sum();
    if total > 0.0 {
        Ok(AnswerFrequencies {
            values: raw.iter().map(|f| f.map(|f| f / total)).collect(),
            no_valid_answers: false,
        })
    } else {
        Ok(AnswerFrequencies {
            values: raw.iter().map(|f| f.map(|_| 0.0)).collect(),
            no_valid_answers: true,
        })
    }
}

/// "1224" ranking, higher score is better.
pub fn competition_ranks(scores: &[f64]) -> Vec<usize> {
    scores
        .iter()
        .map(|s| 1 + scores.iter().filter(|o| *o > s).count())
        .collect()
}

/// Aggregate statistics for one (model, dataset, format).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalCell {
    pub model: String,
    pub dataset: String,
    pub format: PromptFormat,
    pub n: u64,
    pub accuracy: f64,
    pub coverage: f64,
    /// How often the ID at each position was answered (s_i).
    pub position_selected: Vec<u64>,
    /// How often each position appeared (n_i).
    pub position_present: Vec<u64>,
    /// How often the answer at each position was the correct one (C_i).
    pub position_correct: Vec<u64>,
    /// Option count shared by every instance, if uniform.
    pub option_count: Option<usize>,
}

impl EvalCell {
    pub fn answer_frequencies(&self) -> AnswerFrequencies {
        answer_frequencies(&self.position_selected, &self.position_present)
            .expect("cell vectors share a length")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct GridKey {
    pub model: String,
    pub dataset: String,
    pub format: PromptFormat,
}

/// Accuracy and coverage in percent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridValue {
    pub accuracy: f64,
    pub coverage: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct CsvRow {
    model: String,
    dataset: String,
    separator: OptionSeparator,
    delimiter: OptionDelimiter,
    id_set: OptionIdSet,
    accuracy: f64,
    coverage: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ResultGrid {
    cells: BTreeMap<GridKey, GridValue>,
}

impl ResultGrid {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, key: GridKey, value: GridValue) -> Result<()> {
        for (name, v) in [("accuracy", value.accuracy), ("coverage", value.coverage)] {
            if !(0.0..=100.0).contains(&v) {
                return Err(Error::domain(format!(
                    "{name} {v} out of range for {}/{}/{}",
                    key.model, key.dataset, key.format
                )));
            }
        }
        if self.cells.contains_key(&key) {
            return Err(Error::DuplicateId(format!(
                "{}/{}/{}",
                key.model, key.dataset, key.format
            )));
        }
        self.cells.insert(key, value);
        Ok(())
    }

    pub fn from_eval_cells<'a>(cells: impl IntoIterator<Item = &'a EvalCell>) -> Result<Self> {
        let mut grid = ResultGrid::new();
        for c in cells {
            grid.insert(
                GridKey {
                    model: c.model.clone(),
                    dataset: c.dataset.clone(),
                    format: c.format,
                },
                GridValue {
                    accuracy: 100.0 * c.accuracy,
                    coverage: 100.0 * c.coverage,
                },
            )?;
        }
        Ok(grid)
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&GridKey, &GridValue)> {
        self.cells.iter()
    }

    pub fn get(&self, model: &str, dataset: &str, format: PromptFormat) -> Option<GridValue> {
        self.cells
            .get(&GridKey {
                model: model.to_string(),
                dataset: dataset.to_string(),
                format,
            })
            .copied()
    }

    pub fn models(&self) -> Vec<String> {
        let set: BTreeSet<&String> = self.cells.keys().map(|k| &k.model).collect();
        set.into_iter().cloned().collect()
    }

    pub fn datasets(&self) -> Vec<String> {
        let set: BTreeSet<&String> = self.cells.keys().map(|k| &k.dataset).collect();
        set.into_iter().cloned().collect()
    }

    /// Models that have at least one cell for `dataset`.
    pub fn models_for(&self, dataset: &str) -> Vec<String> {
        let set: BTreeSet<&String> = self
            .cells
            .keys()
            .filter(|k| k.dataset == dataset)
            .map(|k| &k.model)
            .collect();
        set.into_iter().cloned().collect()
    }

    pub fn restrict_dataset(&self, dataset: &str) -> ResultGrid {
        ResultGrid {
            cells: self
                .cells
                .iter()
                .filter(|(k, _)| k.dataset == dataset)
                .map(|(k, v)| (k.clone(), *v))
                .collect(),
        }
    }

    /// All 48 cells of (model, dataset) in format order, or the missing ones.
    pub fn complete_cells(&self, model: &str, dataset: &str) -> Result<Vec<(PromptFormat, GridValue)>> {
        let mut out = Vec::with_capacity(48);
        let mut missing = Vec::new();
        for f in enumerate_formats() {
            match self.get(model, dataset, f) {
                Some(v) => out.push((f, v)),
                None => missing.push(format!("{model}/{dataset}/{f}")),
            }
        }
        if missing.is_empty() {
            Ok(out)
        } else {
            Err(Error::MissingCells(missing))
        }
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(reader);
        let mut grid = ResultGrid::new();
        for row in rdr.deserialize() {
            let row: CsvRow = row?;
            grid.insert(
                GridKey {
                    model: row.model,
                    dataset: row.dataset,
                    format: PromptFormat::new(row.id_set, row.delimiter, row.separator),
                },
                GridValue {
                    accuracy: row.accuracy,
                    coverage: row.coverage,
                },
            )?;
        }
        Ok(grid)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_csv(std::fs::File::open(path)?)
    }

    /// Rows sorted by dataset, model, then format index.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut keys: Vec<&GridKey> = self.cells.keys().collect();
        keys.sort_by(|a, b| {
            (&a.dataset, &a.model, a.format.index()).cmp(&(&b.dataset, &b.model, b.format.index()))
        });
        let mut w = csv::Writer::from_writer(writer);
        for k in keys {
            let v = self.cells[k];
            w.serialize(CsvRow {
                model: k.model.clone(),
                dataset: k.dataset.clone(),
                separator: k.format.separator,
                delimiter: k.format.delimiter,
                id_set: k.format.id_set,
                accuracy: v.accuracy,
                coverage: v.coverage,
            })?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LevelDeviation {
    pub level: FactorLevel,
    /// Mean of the level's cells minus the overall mean, in pp.
    pub deviation: f64,
    pub cells: usize,
}

pub fn deviation_from_mean(grid: &ResultGrid, model: &str, dataset: &str) -> Result<Vec<LevelDeviation>> {
    let cells = grid.complete_cells(model, dataset)?;
    let all: Vec<(PromptFormat, f64)> = cells.iter().map(|(f, v)| (*f, v.accuracy)).collect();
    Ok(level_deviations(&all)
        .into_iter()
        .map(|(level, d, cells)| LevelDeviation {
            level,
            deviation: d.expect("complete grid covers every level"),
            cells,
        })
        .collect())
}

/// Deviations using only cells with coverage at or above `threshold`
/// (a fraction). Levels with no retained cells are `None`.
pub fn filtered_deviation_from_mean(
    grid: &ResultGrid,
    model: &str,
    dataset: &str,
    threshold: f64,
) -> Result<Vec<(FactorLevel, Option<f64>)>> {
    let cells = grid.complete_cells(model, dataset)?;
    let kept: Vec<(PromptFormat, f64)> = cells
        .iter()
        .filter(|(_, v)| v.coverage >= 100.0 * threshold)
        .map(|(f, v)| (*f, v.accuracy))
        .collect();
    Ok(level_deviations(&kept)
        .into_iter()
        .map(|(l, d, _)| (l, d))
        .collect())
}

fn level_deviations(cells: &[(PromptFormat, f64)]) -> Vec<(FactorLevel, Option<f64>, usize)> {
    let overall = mean(cells.iter().map(|c| c.1));
    FactorLevel::all()
        .into_iter()
        .map(|level| {
            let vals: Vec<f64> = cells
                .iter()
                .filter(|(f, _)| level.matches(f))
                .map(|c| c.1)
                .collect();
            let d = match (overall, mean(vals.iter().copied())) {
                (Some(o), Some(m)) => Some(m - o),
                _ => None,
            };
            (level, d, vals.len())
        })
        .collect()
}

fn mean(xs: impl Iterator<Item = f64>) -> Option<f64> {
    let (mut sum, mut n) = (0.0, 0usize);
    for x in xs {
        sum += x;
        n += 1;
    }
    (n > 0).then(|| sum / n as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilteredGrid {
    pub grid: ResultGrid,
    pub removed: Vec<GridKey>,
}

/// Drops cells with coverage strictly below `threshold` (a fraction).
pub fn coverage_filter(grid: &ResultGrid, threshold: f64) -> FilteredGrid {
    let mut kept = ResultGrid::new();
    let mut removed = Vec::new();
    for (k, v) in grid.iter() {
        if v.coverage < 100.0 * threshold {
            removed.push(k.clone());
        } else {
            kept.cells.insert(k.clone(), *v);
        }
    }
    FilteredGrid { grid: kept, removed }
}
