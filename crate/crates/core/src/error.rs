//! Crate-wide error type.
//!
//! The variants mirror the failure classes of the pipeline: bad numerical
//! parameters, incomplete potential tables, misuse of an API contract,
//! thermodynamic divergence and truncation control giving up.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// A parameter is outside its mathematical domain (e.g. `kappa <= 0`).
    #[error("domain error: {0}")]
    Domain(String),

    /// An input table or configuration is incomplete or inconsistent.
    #[error("configuration error: {0}")]
    Config(String),

    /// An API contract was violated by the caller.
    #[error("usage error: {0}")]
    Usage(String),

    /// The grand-canonical partition sum has no finite limit for the
    /// requested parameters.
    #[error("divergence: {0}")]
    Divergence(String),

    /// Occupation-cap growth hit its budget before the partition function
    /// stabilized.
    #[error("truncation failure: {0}")]
    Truncation(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
    pub fn usage(msg: impl Into<String>) -> Self {
        Error::Usage(msg.into())
    }
}
