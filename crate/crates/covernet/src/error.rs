//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Malformed caller input (empty audio, non-finite values, ...).
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// Inconsistent or infeasible configuration.
    #[error("configuration error: {0}")]
    Config(String),

    /// Tensor/matrix dimensions do not match what an operation requires.
    #[error("shape error: {0}")]
    Shape(String),

    /// A salience matrix with no melody content; the track is excluded
    /// from batches rather than aborting a run.
    #[error("empty melody for track {0:?}")]
    EmptyMelody(String),

    /// A binary artifact failed to parse (bad magic, version, truncation).
    #[error("format error: {0}")]
    Format(String),

    /// Manifest or split contents violate an invariant.
    #[error("data error: {0}")]
    Data(String),

    /// No valid triplet can be mined from a batch.
    #[error("mining error: {0}")]
    Mining(String),

    /// NaN/Inf reached the optimizer or a metric.
    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
