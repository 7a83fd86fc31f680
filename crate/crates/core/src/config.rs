//! TOML configuration and backend construction.
//!
//! ```toml
//! [run]
//! max_inflight = 8
//! max_attempts = 3
//!
//! [backends.qwen25]
//! endpoint = "http://localhost:8000/v1"
//! model = "Qwen/Qwen2.5-VL-7B-Instruct"
//! api_key_env = "OPENAI_API_KEY"
//! ```
//!
//! Model names of the form `stub:<profile>` build scripted stubs instead
//! of looking up a configured backend.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::backend::http::{HttpConfig, OpenAiBackend};
use crate::backend::stub::{AnswerKey, StubBackend, StubProfile};
use crate::backend::{Backend, BackendRegistry};
use crate::dataset::Dataset;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSettings {
    pub cache: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub max_inflight: Option<usize>,
    pub max_attempts: Option<u32>,
    /// Artificial latency per stub request, for exercising interruption.
    pub stub_delay_ms: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub run: RunSettings,
    pub backends: BTreeMap<String, HttpConfig>,
}

impl Config {
    pub fn load(path: &Path) -> Result<Config> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn parse(text: &str) -> Result<Config> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }
}

pub const STUB_PREFIX: &str = "stub:";

/// Builds a registry holding one backend per model name. Stubs answer from
/// the given datasets.
pub fn build_registry(config: &Config, models: &[&str], datasets: &[&Dataset]) -> Result<BackendRegistry> {
    let key = Arc::new(AnswerKey::from_datasets(datasets.iter().copied()));
    let mut registry = BackendRegistry::new();
    for &name in models {
        let backend: Arc<dyn Backend> = match name.strip_prefix(STUB_PREFIX) {
            Some(profile) => {
                let profile: StubProfile = profile.parse()?;
                let mut stub = StubBackend::new(name, profile, key.clone());
                if let Some(ms) = config.run.stub_delay_ms {
                    stub = stub.with_delay(Duration::from_millis(ms));
                }
                Arc::new(stub)
            }
            None => {
                let cfg = config
                    .backends
                    .get(name)
                    .ok_or_else(|| Error::Config(format!("no backend `{name}` in configuration")))?;
                Arc::new(OpenAiBackend::new(name, cfg.clone())?)
            }
        };
        registry.insert(backend);
    }
    Ok(registry)
}
