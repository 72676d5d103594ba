use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the core library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("invalid value: {0}")]
    InvalidValue(String),
    #[error("mask must be hard (binary); binarize it first")]
    SoftMask,
    #[error("invalid radius {radius} for a {height}x{width} grid")]
    InvalidRadius { radius: usize, height: usize, width: usize },
    #[error("degenerate affine transform (|det| = {0:e})")]
    DegenerateTransform(f64),
    #[error("triplet side mismatch: expected {expected}, got {got}")]
    SideMismatch { expected: crate::datamodel::Side, got: crate::datamodel::Side },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("missing configuration key(s): {}", .0.join(", "))]
    MissingKeys(Vec<String>),
    #[error("unknown configuration key `{0}`")]
    UnknownKey(String),
    #[error("empty dataset: {0}")]
    EmptyDataset(String),
    #[error("unknown category `{0}`")]
    UnknownCategory(String),
    #[error("source and target categories overlap: {}", .0.join(", "))]
    CategoryOverlap(Vec<String>),
    #[error("labeled budget {budget} exceeds pool of {pool}")]
    BudgetExceedsPool { budget: usize, pool: usize },
    #[error("non-finite loss at step {step}: {detail}")]
    NonFinite { step: u64, detail: String },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("failed to load {} entries: {}", .0.len(), summarize(.0))]
    Load(Vec<(PathBuf, String)>),
    #[error("image error for {path}: {message}")]
    Image { path: PathBuf, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

fn summarize(errors: &[(PathBuf, String)]) -> String {
    errors
        .iter()
        .take(3)
        .map(|(p, m)| format!("{}: {m}", p.display()))
        .collect::<Vec<_>>()
        .join("; ")
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
