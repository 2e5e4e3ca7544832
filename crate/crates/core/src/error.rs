use std::path::PathBuf;

/// Errors produced anywhere in the crate.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("operator is not square: {rows} rows, row {row} has {cols} entries")]
    NotSquare { rows: usize, row: usize, cols: usize },

    #[error("operator is singular (sign 0); the spherical estimators are undefined")]
    Singular,

    #[error("invalid operator: {0}")]
    InvalidOperator(String),

    #[error("unknown fixture `{0}`")]
    UnknownFixture(String),

    #[error("chart pole: {0}")]
    Pole(String),

    #[error("value {value} outside spline interval [{left}, {right}]")]
    OutOfDomain { value: f64, left: f64, right: f64 },

    #[error("invalid argument: {0}")]
    Invalid(String),

    #[error("overflow of ||As||^-n at sample {index}: n*log||As|| = {log_norm_n}")]
    WeightOverflow { index: usize, log_norm_n: f64 },

    #[error("training diverged at iteration {iteration}: {reason}")]
    Diverged { iteration: usize, reason: String },

    #[error("missing artifact: {}", .0.display())]
    MissingArtifact(PathBuf),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
