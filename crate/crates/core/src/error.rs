use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Matrix or vector dimensions do not line up.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// A Cholesky pivot fell below the rank threshold. For constraint
    /// systems this means the constraint rows are linearly dependent and
    /// the dependent ones should be removed.
    #[error("matrix not positive definite at pivot {pivot} (value {value:.3e}); remove linearly dependent constraints")]
    Singular { pivot: usize, value: f64 },

    /// A scale factor was zero, negative, or non-finite.
    #[error("invalid scale: {0}")]
    Scale(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    /// Bad or empty numeric data (non-finite entries, empty batches, ...).
    #[error("invalid data: {0}")]
    Data(String),

    /// A non-finite value was produced by an otherwise valid computation.
    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("training aborted at epoch {epoch}, batch {batch}: {reason}")]
    Training {
        epoch: usize,
        batch: usize,
        reason: String,
    },

    #[error("parse error at line {line}: {reason}")]
    Parse { line: usize, reason: String },

    /// CSV header does not match the dataset manifest.
    #[error("schema mismatch: {0}")]
    Schema(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
