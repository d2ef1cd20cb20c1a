use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("grid side {0} is not of the form 2^k + 1 with k >= 2")]
    InvalidSize(usize),

    #[error("dimension mismatch: expected side {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("data length {actual} does not match side {n} (expected {expected})")]
    DataLength {
        n: usize,
        expected: usize,
        actual: usize,
    },

    #[error("non-finite value at index {0}")]
    NonFinite(usize),

    #[error("mask value {value} at index {index} is not 0 or 1")]
    InvalidMaskValue { index: usize, value: f64 },

    #[error("mask has interior points on the outer frame")]
    MaskFrameNotBoundary,

    #[error("invalid problem: {0}")]
    InvalidProblem(String),

    #[error("grid too small: side {n}, need at least {min}")]
    GridTooSmall { n: usize, min: usize },

    #[error("singular system matrix (pivot {pivot} at column {column})")]
    Singular { column: usize, pivot: f64 },

    #[error("degenerate problem: effective right-hand side has zero norm")]
    DegenerateRhs,

    #[error("format error in {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("checkpoint schema version {found} is not supported (expected {expected})")]
    SchemaVersion { found: u32, expected: u32 },

    #[error("checkpoint shape mismatch: {0}")]
    Shape(String),

    #[error("tape does not match parameters: {0}")]
    TapeMismatch(String),

    #[error("training diverged: non-finite loss at epoch {epoch}, batch {batch} (seed {seed})")]
    NanLoss { epoch: usize, batch: usize, seed: u64 },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn format(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            reason: reason.into(),
        }
    }
}
