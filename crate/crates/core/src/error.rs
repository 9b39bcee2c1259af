//! Error type shared by the simulation core.

use thiserror::Error;

/// Errors surfaced by configuration parsing, validation and simulation.
#[derive(Debug, Error)]
pub enum Error {
    /// Scenario file or configuration is invalid (bad value, unknown key,
    /// missing section, inconsistent parameters).
    #[error("config error: {0}")]
    Config(String),

    /// An operation was called outside its stated domain.
    #[error("domain error: {0}")]
    Domain(String),

    /// A CSV file being read back does not match the expected contract.
    #[error("csv error: {0}")]
    Csv(String),

    /// Underlying I/O failure.
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Build a config error from anything displayable.
    pub fn config(msg: impl std::fmt::Display) -> Self {
        Error::Config(msg.to_string())
    }

    /// Build a domain error from anything displayable.
    pub fn domain(msg: impl std::fmt::Display) -> Self {
        Error::Domain(msg.to_string())
    }

    /// Build a CSV error from anything displayable.
    pub fn csv(msg: impl std::fmt::Display) -> Self {
        Error::Csv(msg.to_string())
    }
}
