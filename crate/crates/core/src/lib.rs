//! Prompt-format bias analysis for multiple-choice (V)QA evaluation.

pub mod backend;
pub mod confidence;
pub mod config;
pub mod dataset;
pub mod error;
pub mod metrics;
pub mod mitigation;
pub mod prompt;
pub mod report;
pub mod run_matrix;
pub mod significance;

pub use error::{Error, Result};
