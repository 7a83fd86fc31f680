//! Client for OpenAI-compatible inference servers.
//!
//! Generation goes through `/chat/completions` with sampling disabled.
//! Continuation scoring and token counting use `/completions` with
//! `echo: true` and `max_tokens: 0`, which returns prompt log-probabilities.
//! Scoring with an image attached is not expressible in that endpoint and
//! reports a capability error.

use std::path::Path;
use std::sync::{Condvar, Mutex};
use std::time::Duration;

use base64::Engine;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{Backend, BackendError, Capabilities, Generation, GenerationRequest, TokenLogprob, TopLogprob};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HttpConfig {
    /// Base URL including the version prefix, e.g. `http://localhost:8000/v1`.
    pub endpoint: String,
    pub model: String,
    /// Environment variable holding the API key; unset means no auth header.
    pub api_key_env: Option<String>,
    pub timeout_secs: u64,
    pub max_inflight: usize,
    pub max_retries: u32,
    pub backoff_ms: u64,
    pub max_backoff_ms: u64,
    pub top_logprobs: u32,
    /// Whether the server implements echo scoring on `/completions`.
    pub continuation_scoring: bool,
}

impl Default for HttpConfig {
    fn default() -> Self {
        HttpConfig {
            endpoint: "http://localhost:8000/v1".into(),
            model: String::new(),
            api_key_env: None,
            timeout_secs: 120,
            max_inflight: 8,
            max_retries: 4,
            backoff_ms: 500,
            max_backoff_ms: 30_000,
            top_logprobs: 5,
            continuation_scoring: true,
        }
    }
}

/// Counting semaphore bounding in-flight requests.
struct Semaphore {
    permits: Mutex<usize>,
    freed: Condvar,
}

struct Permit<'a>(&'a Semaphore);

impl Semaphore {
    fn new(n: usize) -> Self {
        Semaphore {
            permits: Mutex::new(n.max(1)),
            freed: Condvar::new(),
        }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut p = self.permits.lock().unwrap_or_else(|e| e.into_inner());
        while *p == 0 {
            p = self.freed.wait(p).unwrap_or_else(|e| e.into_inner());
        }
        *p -= 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        let mut p = self.0.permits.lock().unwrap_or_else(|e| e.into_inner());
        *p += 1;
        self.0.freed.notify_one();
    }
}

pub struct OpenAiBackend {
    id: String,
    config: HttpConfig,
    api_key: Option<String>,
    client: reqwest::blocking::Client,
    inflight: Semaphore,
}

impl OpenAiBackend {
    pub fn new(id: impl Into<String>, config: HttpConfig) -> Result<Self, BackendError> {
        if config.model.is_empty() {
            return Err(BackendError::InvalidRequest("model name is empty".into()));
        }
        let api_key = match &config.api_key_env {
            Some(var) => Some(std::env::var(var).map_err(|_| {
                BackendError::InvalidRequest(format!("environment variable `{var}` is not set"))
            })?),
            None => None,
        };
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(config.timeout_secs))
            .build()
            .map_err(|e| BackendError::Transport(e.to_string()))?;
        Ok(OpenAiBackend {
            id: id.into(),
            inflight: Semaphore::new(config.max_inflight),
            config,
            api_key,
            client,
        })
    }

    pub fn config(&self) -> &HttpConfig {
        &self.config
    }

    fn url(&self, path: &str) -> String {
        format!("{}/{}", self.config.endpoint.trim_end_matches('/'), path)
    }

    fn post_once(&self, path: &str, body: &Value) -> Result<Value, BackendError> {
        let _permit = self.inflight.acquire();
        let mut req = self.client.post(self.url(path)).json(body);
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(|e| BackendError::Transport(e.to_string()))?;
        let status = resp.status();
        let text = resp.text().map_err(|e| BackendError::Transport(e.to_string()))?;
        if status.is_success() {
            return serde_json::from_str(&text).map_err(|e| BackendError::Protocol(e.to_string()));
        }
        let msg = format!("HTTP {}: {}", status.as_u16(), truncate(&text, 300));
        Err(match status.as_u16() {
            408 | 429 | 500..=599 => BackendError::Transport(msg),
            400 | 404 | 422 => BackendError::InvalidRequest(msg),
            _ => BackendError::Refusal(msg),
        })
    }

    /// Requests are deterministic, so resending after a transport error is safe.
    fn post(&self, path: &str, body: &Value) -> Result<Value, BackendError> {
        let mut attempt = 0;
        loop {
            match self.post_once(path, body) {
                Err(e) if e.is_retryable() && attempt < self.config.max_retries => {
                    let wait = backoff(self.config.backoff_ms, self.config.max_backoff_ms, attempt);
                    log::warn!("{}: {e}; retrying in {wait:?}", self.id);
                    std::thread::sleep(wait);
                    attempt += 1;
                }
                other => return other,
            }
        }
    }

    fn echo_logprobs(&self, text: &str) -> Result<EchoLogprobs, BackendError> {
        let body = json!({
            "model": self.config.model,
            "prompt": text,
            "max_tokens": 0,
            "echo": true,
            "logprobs": 0,
            "temperature": 0.0,
        });
        let v = self.post("completions", &body)?;
        let lp = v
            .pointer("/choices/0/logprobs")
            .cloned()
            .ok_or_else(|| BackendError::Protocol("missing choices[0].logprobs".into()))?;
        serde_json::from_value(lp).map_err(|e| BackendError::Protocol(e.to_string()))
    }
}

pub(crate) fn backoff(base_ms: u64, max_ms: u64, attempt: u32) -> Duration {
    let ms = base_ms.saturating_mul(1u64 << attempt.min(20));
    Duration::from_millis(ms.min(max_ms))
}

fn truncate(s: &str, n: usize) -> &str {
    match s.char_indices().nth(n) {
        Some((i, _)) => &s[..i],
        None => s,
    }
}

#[derive(Debug, Deserialize)]
struct EchoLogprobs {
    tokens: Vec<String>,
    token_logprobs: Vec<Option<f64>>,
    #[serde(default)]
    text_offset: Vec<usize>,
}

/// Converts an image reference to something a chat message can carry.
/// URLs and data URIs pass through; local files become base64 data URIs.
pub fn image_url(image_ref: &str) -> Result<String, BackendError> {
    if image_ref.starts_with("http://")
        || image_ref.starts_with("https://")
        || image_ref.starts_with("data:")
    {
        return Ok(image_ref.to_string());
    }
    let path = Path::new(image_ref);
    let bytes = std::fs::read(path)
        .map_err(|e| BackendError::InvalidRequest(format!("cannot read image {image_ref}: {e}")))?;
    let mime = match path
        .extension()
        .and_then(|e| e.to_str())
        .map(str::to_ascii_lowercase)
        .as_deref()
    {
        Some("png") => "image/png",
        Some("gif") => "image/gif",
        Some("webp") => "image/webp",
        Some("bmp") => "image/bmp",
        _ => "image/jpeg",
    };
    let data = base64::engine::general_purpose::STANDARD.encode(bytes);
    Ok(format!("data:{mime};base64,{data}"))
}

pub(crate) fn chat_body(config: &HttpConfig, request: &GenerationRequest<'_>) -> Result<Value, BackendError> {
    let content = match request.image_ref {
        Some(img) => json!([
            {"type": "image_url", "image_url": {"url": image_url(img)?}},
            {"type": "text", "text": request.prompt},
        ]),
        None => json!(request.prompt),
    };
    Ok(json!({
        "model": config.model,
        "messages": [{"role": "user", "content": content}],
        "max_tokens": request.max_new_tokens,
        "temperature": 0.0,
        "top_p": 1.0,
        "logprobs": true,
        "top_logprobs": config.top_logprobs,
    }))
}

pub(crate) fn parse_chat_response(v: &Value) -> Result<Generation, BackendError> {
    let text = v
        .pointer("/choices/0/message/content")
        .and_then(Value::as_str)
        .ok_or_else(|| BackendError::Protocol("missing choices[0].message.content".into()))?
        .to_string();
    let token_logprobs = match v.pointer("/choices/0/logprobs/content").and_then(Value::as_array) {
        None => None,
        Some(items) => {
            let mut out = Vec::with_capacity(items.len());
            for item in items {
                let token = item["token"]
                    .as_str()
                    .ok_or_else(|| BackendError::Protocol("logprob entry without token".into()))?;
                let logprob = item["logprob"]
                    .as_f64()
                    .ok_or_else(|| BackendError::Protocol("logprob entry without logprob".into()))?;
                let top = item["top_logprobs"]
                    .as_array()
                    .map(|alts| {
                        alts.iter()
                            .filter_map(|a| {
                                Some(TopLogprob {
                                    token: a["token"].as_str()?.to_string(),
                                    logprob: a["logprob"].as_f64()?,
                                })
                            })
                            .collect()
                    })
                    .unwrap_or_default();
                out.push(TokenLogprob {
                    token: token.to_string(),
                    logprob,
                    top,
                });
            }
            Some(out)
        }
    };
    let generation = Generation { text, token_logprobs };
    // Some servers strip whitespace from content but not from tokens; keep
    // the text and drop token data that no longer lines up.
    if generation.is_consistent() {
        Ok(generation)
    } else {
        log::debug!("token log-probabilities do not concatenate to text; dropping them");
        Ok(Generation::text_only(generation.text))
    }
}

impl Backend for OpenAiBackend {
    fn id(&self) -> &str {
        &self.id
    }

    fn capabilities(&self) -> Capabilities {
        Capabilities {
            generation: true,
            continuation_scoring: self.config.continuation_scoring,
        }
    }

    fn generate(&self, request: &GenerationRequest<'_>) -> Result<Generation, BackendError> {
        let body = chat_body(&self.config, request)?;
        let v = self.post("chat/completions", &body)?;
        let mut generation = parse_chat_response(&v)?;
        if let Some(tokens) = &mut generation.token_logprobs {
            if tokens.len() > request.max_new_tokens {
                return Err(BackendError::Protocol(format!(
                    "server returned {} tokens for a budget of {}",
                    tokens.len(),
                    request.max_new_tokens
                )));
            }
            tokens.shrink_to_fit();
        }
        Ok(generation)
    }

    fn score_continuation(
        &self,
        prompt: &str,
        image_ref: Option<&str>,
        continuation: &str,
    ) -> Result<Vec<f64>, BackendError> {
        if image_ref.is_some() {
            return Err(BackendError::Capability(
                "continuation scoring with an image is not supported by the completions endpoint".into(),
            ));
        }
        let full = format!("{prompt}{continuation}");
        let lp = self.echo_logprobs(&full)?;
        continuation_slice(&lp, prompt.chars().count())
    }

    fn token_count(&self, text: &str) -> Result<usize, BackendError> {
        Ok(self.echo_logprobs(text)?.tokens.len())
    }
}

/// Log-probabilities of tokens starting at or after `prompt_chars`.
/// A token straddling the boundary is counted with the prompt.
fn continuation_slice(lp: &EchoLogprobs, prompt_chars: usize) -> Result<Vec<f64>, BackendError> {
    if lp.text_offset.len() != lp.tokens.len() || lp.token_logprobs.len() != lp.tokens.len() {
        return Err(BackendError::Protocol("echo logprob arrays differ in length".into()));
    }
    let out: Vec<f64> = lp
        .text_offset
        .iter()
        .zip(&lp.token_logprobs)
        .filter(|(off, _)| **off >= prompt_chars)
        .map(|(_, l)| l.ok_or_else(|| BackendError::Protocol("null continuation logprob".into())))
        .collect::<Result<_, _>>()?;
    if out.is_empty() {
        return Err(BackendError::Protocol("no continuation tokens in echo response".into()));
    }
    Ok(out)
}
