//! Crate-wide error type.

use thiserror::Error;

/// Errors raised across the simulator.
#[derive(Debug, Error)]
pub enum Error {
    /// Structural misuse: mismatched layouts, inconsistent dimensions,
    /// invalid configuration values.
    #[error("configuration error: {0}")]
    Config(String),

    /// Invalid caller-supplied data: out-of-range labels, unknown sample
    /// ids, degenerate requests.
    #[error("input error: {0}")]
    Input(String),

    /// Malformed external file (bad magic, truncated payload, count
    /// mismatch).
    #[error("format error: {0}")]
    Format(String),

    /// The recorded history carries no usable signal for learning-rate
    /// estimation (every round skipped).
    #[error("degenerate history: {0}")]
    DegenerateHistory(String),

    /// The target client's weight is too close to 1, the gradient-difference
    /// rescaling divides by ~0.
    #[error("singularity: {0}")]
    Singularity(String),

    /// A numeric operation produced a non-finite value.
    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
