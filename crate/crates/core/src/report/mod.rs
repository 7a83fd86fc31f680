//! Published-result fixtures and figure output.

pub mod svg;

use std::collections::BTreeMap;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::metrics::ResultGrid;
use crate::mitigation::{read_published, PublishedRow};

pub const PUBLISHED_GRID_CSV: &str = include_str!("../../fixtures/published_grid.csv");
pub const PUBLISHED_GRID_SHA256: &str = include_str!("../../fixtures/published_grid.csv.sha256");
pub const PUBLISHED_MITIGATION_CSV: &str = include_str!("../../fixtures/published_mitigation.csv");
pub const PUBLISHED_MITIGATION_SHA256: &str =
    include_str!("../../fixtures/published_mitigation.csv.sha256");

/// Models per dataset in the published tables.
pub const PUBLISHED_MODELS: usize = 7;

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// First field of a `sha256sum`-style line.
fn expected_digest(sum_file: &str) -> &str {
    sum_file.split_whitespace().next().unwrap_or("")
}

fn verify(path: &Path, bytes: &[u8], sum_file: &str) -> Result<()> {
    let expected = expected_digest(sum_file);
    let found = sha256_hex(bytes);
    if expected != found {
        return Err(Error::Checksum {
            path: path.to_path_buf(),
            expected: expected.to_string(),
            found,
        });
    }
    Ok(())
}

/// Every dataset must have `models × 48` cells and every model all 48.
pub fn validate_published(grid: &ResultGrid, models: usize) -> Result<()> {
    let mut per_dataset: BTreeMap<String, usize> = BTreeMap::new();
    for (k, _) in grid.iter() {
        *per_dataset.entry(k.dataset.clone()).or_default() += 1;
    }
    for (dataset, n) in &per_dataset {
        let m = grid.models_for(dataset);
        if m.len() != models || *n != models * 48 {
            return Err(Error::IncompleteGrid(format!(
                "{dataset}: {n} rows over {} models, expected {}",
                m.len(),
                models * 48
            )));
        }
        for model in &m {
            grid.complete_cells(model, dataset)?;
        }
    }
    Ok(())
}

/// Loads a published grid, checking it against `<path>.sha256` when that
/// file exists, then validating completeness.
pub fn ingest_published_grid(path: &Path) -> Result<ResultGrid> {
    let bytes = std::fs::read(path)?;
    let mut sum_path = path.as_os_str().to_owned();
    sum_path.push(".sha256");
    if let Ok(sum) = std::fs::read_to_string(&sum_path) {
        verify(path, &bytes, &sum)?;
    }
    let grid = ResultGrid::read_csv(&bytes[..])?;
    validate_published(&grid, PUBLISHED_MODELS)?;
    Ok(grid)
}

/// The grid compiled into the binary.
pub fn published_grid() -> Result<ResultGrid> {
    verify(
        Path::new("published_grid.csv"),
        PUBLISHED_GRID_CSV.as_bytes(),
        PUBLISHED_GRID_SHA256,
    )?;
    let grid = ResultGrid::read_csv(PUBLISHED_GRID_CSV.as_bytes())?;
    validate_published(&grid, PUBLISHED_MODELS)?;
    Ok(grid)
}

/// Printed per-method accuracies compiled into the binary.
pub fn published_mitigation() -> Result<Vec<PublishedRow>> {
    verify(
        Path::new("published_mitigation.csv"),
        PUBLISHED_MITIGATION_CSV.as_bytes(),
        PUBLISHED_MITIGATION_SHA256,
    )?;
    read_published(PUBLISHED_MITIGATION_CSV.as_bytes())
}
