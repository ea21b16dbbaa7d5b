use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("invalid parameter: {0}")]
    Parameter(String),

    /// `p ≤ q`: the per-round privacy losses no longer form a convergent series.
    #[error("privacy budget diverges: noise decay p = {p} must exceed step decay q = {q}")]
    BudgetDivergence { q: f64, p: f64 },

    #[error("invalid problem: {0}")]
    Problem(String),

    #[error("graph certification failed at round {round}: {reason}")]
    Certification { round: usize, reason: String },

    #[error("no convergence: {0}")]
    NonConvergence(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn param(msg: impl Into<String>) -> Self {
        Error::Parameter(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
