use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// An argument lies outside the domain an operation is defined on.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("duplicate record id `{0}`")]
    DuplicateId(String),

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("inconsistent counts: {0}")]
    Inconsistent(String),

    /// PIA and PriDe are only defined for a fixed option count.
    #[error("unsupported dataset: mixed option counts {0:?}")]
    MixedOptionCounts(Vec<usize>),

    #[error("missing cells: {0:?}")]
    MissingCells(Vec<String>),

    #[error("incomplete grid: {0}")]
    IncompleteGrid(String),

    #[error("backend error: {0}")]
    Backend(#[from] crate::backend::BackendError),

    #[error("model fit failed: {0}")]
    Fit(String),

    #[error("checksum mismatch for {path}: expected {expected}, found {found}")]
    Checksum {
        path: PathBuf,
        expected: String,
        found: String,
    },

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }
}
