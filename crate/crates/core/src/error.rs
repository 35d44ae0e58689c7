//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Deployment could not satisfy the placement constraints.
    #[error("deployment failed: {0}")]
    Deployment(String),

    /// A configuration file or value is invalid.
    #[error("config error: {0}")]
    Config(String),

    /// The instance is too large for the requested solver mode.
    #[error("solver limit exceeded: {0}")]
    SolverLimit(String),

    /// A snapshot file could not be parsed or failed validation.
    #[error("snapshot error: {0}")]
    Snapshot(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
