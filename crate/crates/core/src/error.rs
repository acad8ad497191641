use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {what}: expected {expected}, got {actual}")]
    Shape {
        what: String,
        expected: usize,
        actual: usize,
    },

    #[error("invalid grid: {0}")]
    Grid(String),

    #[error("window of size {window} does not fit a {rows}x{cols} grid")]
    WindowTooLarge {
        window: usize,
        rows: usize,
        cols: usize,
    },

    #[error("missing value for region {0}")]
    MissingRegion(String),

    #[error("cell ({row}, {col}) is not covered by any window")]
    UncoveredCell { row: usize, col: usize },

    #[error("histogram for {0} has zero mass")]
    EmptyHistogram(String),

    #[error("missing distance for pair ({0}, {1})")]
    MissingDistance(String, String),

    #[error("unknown city: {0}")]
    UnknownCity(String),

    #[error("non-finite {what} encountered during {stage}")]
    NonFinite { what: String, stage: String },

    #[error("empty input: {0}")]
    Empty(String),

    #[error("invalid parameter: {0}")]
    InvalidParam(String),

    #[error("insufficient history: {0}")]
    InsufficientHistory(String),

    #[error("protocol violation: {0}")]
    Leakage(String),

    #[error("malformed archive {path}: {reason}")]
    Archive { path: PathBuf, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn shape(what: impl Into<String>, expected: usize, actual: usize) -> Self {
        Error::Shape {
            what: what.into(),
            expected,
            actual,
        }
    }
}
