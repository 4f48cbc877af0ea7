//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by any module in this crate.
#[derive(Debug, Error)]
pub enum Error {
    /// An argument violated an operation's preconditions.
    #[error("invalid parameter: {0}")]
    Parameter(String),

    /// A CSV cell or header failed to parse; carries the location.
    #[error("parse error in {path} at row {row}: {message}")]
    Parse {
        path: String,
        row: usize,
        message: String,
    },

    /// The request exceeds a hard capability limit (e.g. exponential paths).
    #[error("capability exceeded: {0}")]
    Capability(String),

    /// A characteristic value was queried for a coalition that was never evaluated.
    #[error("coalition {0} missing from characteristic table")]
    MissingCoalition(String),

    /// The QP solver terminated without an optimal solution.
    #[error("solver returned {status}: {diagnostics}")]
    Solver { status: String, diagnostics: String },

    /// A mechanism round failed; wraps the underlying error with round context.
    #[error("round {round}: {source}")]
    Mechanism {
        round: usize,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn parameter(msg: impl Into<String>) -> Self {
        Error::Parameter(msg.into())
    }

    pub fn capability(msg: impl Into<String>) -> Self {
        Error::Capability(msg.into())
    }

    /// Wrap an error with the round in which it occurred.
    pub fn in_round(self, round: usize) -> Self {
        Error::Mechanism {
            round,
            source: Box::new(self),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
