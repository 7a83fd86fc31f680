//! Scripted stand-in models.
//!
//! A stub reads the rendered prompt back into question, options and format,
//! looks the item up in an answer key and answers according to its
//! [`StubProfile`]. Tokenization is character-level. Outputs are a pure
//! function of the prompt and the stub configuration.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;
use std::time::Duration;

use sha2::{Digest, Sha256};

use super::{Backend, BackendError, Capabilities, Generation, GenerationRequest, TokenLogprob, TopLogprob};
use crate::dataset::Dataset;
use crate::error::Error;
use crate::prompt::{parse_prompt, FactorLevel};

/// Log-probability reported for tokens outside the stub's ID distribution.
const OFF_DISTRIBUTION_LOGPROB: f64 = -13.815510557964274; // ln(1e-6)

#[derive(Debug, Clone, PartialEq)]
pub enum StubProfile {
    /// Always answers with the gold ID.
    Oracle,
    /// Always answers with the ID at this position (clamped to the last option).
    PositionBiased(usize),
    /// Always emits this ID string, whether or not it is valid for the format.
    IdBiased(String),
    /// Always emits this text.
    Refuser(String),
    /// Oracle, except where the rule fires it picks the option after the gold.
    FormatSensitive(FormatRule),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FormatRule {
    pub level: FactorLevel,
    /// Only questions whose stub confidence is at least this fail; 0 fails all.
    pub min_confidence: f64,
}

impl fmt::Display for StubProfile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StubProfile::Oracle => write!(f, "oracle"),
            StubProfile::PositionBiased(p) => write!(f, "position:{p}"),
            StubProfile::IdBiased(id) => write!(f, "id:{id}"),
            StubProfile::Refuser(text) => write!(f, "refuse:{text}"),
            StubProfile::FormatSensitive(rule) if rule.min_confidence > 0.0 => {
                write!(f, "format:{}:{}", rule.level, rule.min_confidence)
            }
            StubProfile::FormatSensitive(rule) => write!(f, "format:{}", rule.level),
        }
    }
}

impl FromStr for StubProfile {
    type Err = Error;

    /// `oracle`, `position:N`, `id:X`, `refuse:TEXT`, `format:LEVEL[:MIN_CONF]`.
    fn from_str(s: &str) -> Result<Self, Error> {
        let (head, rest) = s.split_once(':').unwrap_or((s, ""));
        let bad = || Error::invalid(format!("unknown stub profile `{s}`"));
        match head {
            "oracle" if rest.is_empty() => Ok(StubProfile::Oracle),
            "position" => rest.parse().map(StubProfile::PositionBiased).map_err(|_| bad()),
            "id" if !rest.is_empty() => Ok(StubProfile::IdBiased(rest.to_string())),
            "refuse" => Ok(StubProfile::Refuser(if rest.is_empty() {
                "I cannot answer that.".to_string()
            } else {
                rest.to_string()
            })),
            "format" => {
                let (level, conf) = rest.split_once(':').unwrap_or((rest, "0"));
                Ok(StubProfile::FormatSensitive(FormatRule {
                    level: level.parse()?,
                    min_confidence: conf.parse().map_err(|_| bad())?,
                }))
            }
            _ => Err(bad()),
        }
    }
}

/// Probability mass the stub puts on the gold ID.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ConfidenceModel {
    Uniform,
    Fixed(f64),
    /// Deterministic per-question mass in `[lo, hi)` derived from the record id.
    PerQuestion { lo: f64, hi: f64 },
}

/// How the stub scores continuations.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ClozeModel {
    /// Every token gets `ln(1/vocab)`.
    Uniform { vocab: usize },
    /// Tokens of the gold option get `ln(gold)`, all others `ln(other)`.
    PreferGold { gold: f64, other: f64 },
}

#[derive(Debug, Clone)]
struct KeyEntry {
    id: String,
    sorted_options: Vec<String>,
    gold_text: String,
}

/// Gold answers indexed by question text and option set.
#[derive(Debug, Clone, Default)]
pub struct AnswerKey {
    entries: HashMap<String, Vec<KeyEntry>>,
}

impl AnswerKey {
    pub fn from_datasets<'a>(datasets: impl IntoIterator<Item = &'a Dataset>) -> Self {
        let mut key = AnswerKey::default();
        for ds in datasets {
            for r in &ds.records {
                let mut sorted_options = r.options.clone();
                sorted_options.sort();
                key.entries.entry(r.question.clone()).or_default().push(KeyEntry {
                    id: r.id.clone(),
                    sorted_options,
                    gold_text: r.gold_text().to_string(),
                });
            }
        }
        key
    }

    fn lookup(&self, question: &str, options: &[String]) -> Option<&KeyEntry> {
        let mut sorted = options.to_vec();
        sorted.sort();
        self.entries
            .get(question)?
            .iter()
            .find(|e| e.sorted_options == sorted)
    }

    fn lookup_question(&self, question: &str) -> Option<&KeyEntry> {
        self.entries.get(question)?.first()
    }
}

pub struct StubBackend {
    id: String,
    profile: StubProfile,
    key: Arc<AnswerKey>,
    confidence: ConfidenceModel,
    cloze: ClozeModel,
    delay: Option<Duration>,
}

impl StubBackend {
    pub fn new(id: impl Into<String>, profile: StubProfile, key: Arc<AnswerKey>) -> Self {
        StubBackend {
            id: id.into(),
            profile,
            key,
            confidence: ConfidenceModel::PerQuestion { lo: 0.4, hi: 0.95 },
            cloze: ClozeModel::Uniform { vocab: 4 },
            delay: None,
        }
    }

    pub fn with_confidence(mut self, confidence: ConfidenceModel) -> Self {
        self.confidence = confidence;
        self
    }

    pub fn with_cloze(mut self, cloze: ClozeModel) -> Self {
        self.cloze = cloze;
        self
    }

    /// Sleeps before every call; used to exercise interrupted runs.
    pub fn with_delay(mut self, delay: Duration) -> Self {
        self.delay = Some(delay);
        self
    }

    pub fn profile(&self) -> &StubProfile {
        &self.profile
    }

    /// Gold-ID probability mass for a record id under this stub's model.
    pub fn gold_mass(&self, record_id: &str, option_count: usize) -> f64 {
        match self.confidence {
            ConfidenceModel::Uniform => 1.0 / option_count as f64,
            ConfidenceModel::Fixed(p) => p,
            ConfidenceModel::PerQuestion { lo, hi } => lo + (hi - lo) * unit_hash(record_id),
        }
    }

    fn answer(&self, gold: usize, k: usize, mass: f64, level_hit: bool, ids: &[String]) -> String {
        match &self.profile {
            StubProfile::Oracle => ids[gold].clone(),
            StubProfile::PositionBiased(p) => ids[(*p).min(k - 1)].clone(),
            StubProfile::IdBiased(id) => id.clone(),
            StubProfile::Refuser(text) => text.clone(),
            StubProfile::FormatSensitive(rule) => {
                if level_hit && mass >= rule.min_confidence {
                    ids[(gold + 1) % k].clone()
                } else {
                    ids[gold].clone()
                }
            }
        }
    }
}

/// Stable hash of a string onto `[0, 1)`.
pub fn unit_hash(s: &str) -> f64 {
    let digest = Sha256::digest(s.as_bytes());
    let mut bytes = [0u8; 8];
    bytes.copy_from_slice(&digest[..8]);
    (u64::from_be_bytes(bytes) >> 11) as f64 / (1u64 << 53) as f64
}

/// First-character distribution over IDs, merging IDs that share a first
/// character. Sorted by descending probability, then token.
fn first_token_distribution(ids: &[String], probs: &[f64]) -> Vec<TopLogprob> {
    let mut merged: Vec<(String, f64)> = Vec::new();
    for (id, &p) in ids.iter().zip(probs) {
        let first: String = id.chars().take(1).collect();
        match merged.iter_mut().find(|(t, _)| *t == first) {
            Some(entry) => entry.1 += p,
            None => merged.push((first, p)),
        }
    }
    merged.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    merged
        .into_iter()
        .map(|(token, p)| TopLogprob {
            token,
            logprob: p.ln(),
        })
        .collect()
}

impl Backend for StubBackend {
    fn id(&self) -> &str {
        &self.id
    }

    fn capabilities(&self) -> Capabilities {
        Capabilities {
            generation: true,
            continuation_scoring: true,
        }
    }

    fn generate(&self, request: &GenerationRequest<'_>) -> Result<Generation, BackendError> {
        if let Some(d) = self.delay {
            std::thread::sleep(d);
        }
        let parsed = parse_prompt(request.prompt)
            .ok_or_else(|| BackendError::InvalidRequest("stub could not parse prompt".into()))?;
        let entry = self
            .key
            .lookup(&parsed.question, &parsed.options)
            .ok_or_else(|| BackendError::InvalidRequest("question not in answer key".into()))?;
        let k = parsed.options.len();
        let gold = parsed
            .options
            .iter()
            .position(|o| *o == entry.gold_text)
            .ok_or_else(|| BackendError::InvalidRequest("gold text missing from options".into()))?;
        let ids = parsed
            .format
            .id_set
            .ids(k)
            .map_err(|e| BackendError::InvalidRequest(e.to_string()))?;

        let mass = self.gold_mass(&entry.id, k).clamp(0.0, 1.0);
        let probs: Vec<f64> = (0..k)
            .map(|i| {
                if i == gold {
                    mass
                } else {
                    (1.0 - mass) / (k - 1) as f64
                }
            })
            .collect();
        let level_hit = match &self.profile {
            StubProfile::FormatSensitive(rule) => rule.level.matches(&parsed.format),
            _ => false,
        };
        let answer = self.answer(gold, k, mass, level_hit, &ids);
        let chars: Vec<char> = answer.chars().take(request.max_new_tokens).collect();
        let top = first_token_distribution(&ids, &probs);
        let tokens = chars
            .iter()
            .enumerate()
            .map(|(i, c)| {
                let token = c.to_string();
                if i == 0 {
                    let logprob = top
                        .iter()
                        .find(|t| t.token == token)
                        .map_or(OFF_DISTRIBUTION_LOGPROB, |t| t.logprob);
                    TokenLogprob {
                        token,
                        logprob,
                        top: top.clone(),
                    }
                } else {
                    TokenLogprob {
                        token,
                        logprob: 0.0,
                        top: Vec::new(),
                    }
                }
            })
            .collect::<Vec<_>>();
        Ok(Generation {
            text: chars.into_iter().collect(),
            token_logprobs: Some(tokens),
        })
    }

    fn score_continuation(
        &self,
        prompt: &str,
        _image_ref: Option<&str>,
        continuation: &str,
    ) -> Result<Vec<f64>, BackendError> {
        if continuation.is_empty() {
            return Err(BackendError::InvalidRequest("empty continuation".into()));
        }
        let n = continuation.chars().count();
        let per_token = match self.cloze {
            ClozeModel::Uniform { vocab } => -(vocab.max(1) as f64).ln(),
            ClozeModel::PreferGold { gold, other } => {
                let is_gold = self
                    .key
                    .lookup_question(prompt.trim_end())
                    .is_some_and(|e| e.gold_text == continuation.trim());
                if is_gold {
                    gold.ln()
                } else {
                    other.ln()
                }
            }
        };
        Ok(vec![per_token; n])
    }

    fn token_count(&self, text: &str) -> Result<usize, BackendError> {
        Ok(text.chars().count())
    }
}
