//! Model backends.
//!
//! Inference is delegated: a backend either talks to an OpenAI-compatible
//! server ([`http::OpenAiBackend`]) or is a scripted stub
//! ([`stub::StubBackend`]) used for tests and dry runs. Both are driven
//! through the same [`Backend`] trait and must be shareable across threads.

pub mod http;
pub mod stub;

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::prompt::OptionIdSet;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum BackendError {
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("backend refused the request: {0}")]
    Refusal(String),
    #[error("capability missing: {0}")]
    Capability(String),
    #[error("malformed backend response: {0}")]
    Protocol(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
}

impl BackendError {
    /// Short class label recorded alongside failed requests.
    pub fn class(&self) -> &'static str {
        match self {
            BackendError::Transport(_) => "transport",
            BackendError::Refusal(_) => "refusal",
            BackendError::Capability(_) => "capability",
            BackendError::Protocol(_) => "protocol",
            BackendError::InvalidRequest(_) => "invalid_request",
        }
    }

    pub fn is_retryable(&self) -> bool {
        matches!(self, BackendError::Transport(_))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Capabilities {
    pub generation: bool,
    pub continuation_scoring: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopLogprob {
    pub token: String,
    pub logprob: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenLogprob {
    pub token: String,
    pub logprob: f64,
    /// Most likely alternatives at this position, if the backend reported them.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub top: Vec<TopLogprob>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Generation {
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub token_logprobs: Option<Vec<TokenLogprob>>,
}

impl Generation {
    pub fn text_only(text: impl Into<String>) -> Self {
        Generation {
            text: text.into(),
            token_logprobs: None,
        }
    }

    /// Checks that the token strings concatenate to the text.
    pub fn is_consistent(&self) -> bool {
        match &self.token_logprobs {
            None => true,
            Some(tokens) => tokens.iter().map(|t| t.token.as_str()).collect::<String>() == self.text,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct GenerationRequest<'a> {
    pub prompt: &'a str,
    pub image_ref: Option<&'a str>,
    pub max_new_tokens: usize,
}

pub trait Backend: Send + Sync {
    fn id(&self) -> &str;

    fn capabilities(&self) -> Capabilities;

    /// Greedy, deterministic generation.
    fn generate(&self, request: &GenerationRequest<'_>) -> Result<Generation, BackendError>;

    /// Log-probability of each continuation token given the prompt and the
    /// preceding continuation tokens.
    fn score_continuation(
        &self,
        prompt: &str,
        image_ref: Option<&str>,
        continuation: &str,
    ) -> Result<Vec<f64>, BackendError>;

    /// Number of tokens the backend's tokenizer produces for `text`.
    fn token_count(&self, text: &str) -> Result<usize, BackendError>;
}

pub fn generate(
    backend: &dyn Backend,
    prompt: &str,
    image_ref: Option<&str>,
    max_new_tokens: usize,
) -> Result<Generation, BackendError> {
    if max_new_tokens == 0 {
        return Err(BackendError::InvalidRequest("max_new_tokens must be >= 1".into()));
    }
    if !backend.capabilities().generation {
        return Err(BackendError::Capability(format!(
            "backend `{}` cannot generate",
            backend.id()
        )));
    }
    backend.generate(&GenerationRequest {
        prompt,
        image_ref,
        max_new_tokens,
    })
}

pub fn score_continuation(
    backend: &dyn Backend,
    prompt: &str,
    image_ref: Option<&str>,
    continuation: &str,
) -> Result<Vec<f64>, BackendError> {
    if continuation.is_empty() {
        return Err(BackendError::InvalidRequest("empty continuation".into()));
    }
    if !backend.capabilities().continuation_scoring {
        return Err(BackendError::Capability(format!(
            "backend `{}` cannot score continuations",
            backend.id()
        )));
    }
    let scores = backend.score_continuation(prompt, image_ref, continuation)?;
    if scores.is_empty() || scores.iter().any(|s| !s.is_finite()) {
        return Err(BackendError::Protocol(
            "continuation scores must be non-empty and finite".into(),
        ));
    }
    Ok(scores)
}

/// Generation budget that fits every ID of the first `count` IDs of `set`.
pub fn max_required_tokens(
    backend: &dyn Backend,
    set: OptionIdSet,
    count: usize,
) -> Result<usize, BackendError> {
    let ids = set
        .ids(count)
        .map_err(|e| BackendError::InvalidRequest(e.to_string()))?;
    let mut max = 0;
    for id in &ids {
        max = max.max(backend.token_count(id)?);
    }
    Ok(max.max(1))
}

/// Named backends available to a run.
#[derive(Clone, Default)]
pub struct BackendRegistry {
    backends: BTreeMap<String, Arc<dyn Backend>>,
}

impl BackendRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, backend: Arc<dyn Backend>) {
        self.backends.insert(backend.id().to_string(), backend);
    }

    pub fn get(&self, id: &str) -> Option<&Arc<dyn Backend>> {
        self.backends.get(id)
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.backends.keys().map(String::as_str)
    }
}

impl std::fmt::Debug for BackendRegistry {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_list().entries(self.backends.keys()).finish()
    }
}
