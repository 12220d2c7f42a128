//! Error type shared across the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid configuration value or malformed config file.
    #[error("config: {0}")]
    Config(String),

    /// Input outside the mathematical domain of an operation.
    #[error("domain: {0}")]
    Domain(String),

    /// Shape or index mismatch between composed objects.
    #[error("dimension: {0}")]
    Dimension(String),

    /// Numerical failure (factorization, non-PSD matrix, NaN).
    #[error("numerical: {0}")]
    Numerical(String),

    /// Conic solver did not return a usable certificate.
    #[error("solver: {0}")]
    Solver(String),

    /// Internal consistency violation; indicates a bug, not bad input.
    #[error("internal: {0}")]
    Internal(String),

    /// Training aborted (diverging loss).
    #[error("training: {0}")]
    Training(String),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    /// Malformed dataset, model, or report file.
    #[error("parse: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, Error>;
