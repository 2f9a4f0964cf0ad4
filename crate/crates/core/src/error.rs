//! Error type shared by all analysis and simulation entry points.

use thiserror::Error;

/// Result alias for fallible toolkit operations.
pub type Result<T> = std::result::Result<T, Error>;

/// Errors surfaced by network analytics, simulation, and bound evaluation.
#[derive(Debug, Error)]
pub enum Error {
    /// An argument violated a documented precondition.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// An exact enumeration would visit more states than the configured
    /// budget allows; callers should fall back to Monte-Carlo estimation.
    #[error(
        "state space of {states} states exceeds the enumeration budget of {budget}; \
         use the event-driven simulator (Monte-Carlo) instead"
    )]
    CapacityExceeded {
        /// Number of states the enumeration would visit.
        states: u128,
        /// Budget in effect when the request was rejected.
        budget: u64,
    },

    /// A quantity is undefined in the requested regime (for example a
    /// maximum-delay bound under exponential service).
    #[error("undefined quantity: {0}")]
    Undefined(String),

    /// Configuration file could not be parsed or failed validation.
    #[error("config error: {0}")]
    Config(String),

    /// Artifact output failed.
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Convenience constructor for precondition failures.
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
