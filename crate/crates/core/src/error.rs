use std::path::PathBuf;

use thiserror::Error;

/// Errors raised across the crate.
#[derive(Debug, Error)]
pub enum Error {
    /// An argument lies outside the operation's domain (index 0, empty grid, ...).
    #[error("domain error: {0}")]
    Domain(String),

    /// A truncated series cannot meet the requested tail certificate.
    #[error("tail certificate {requested:e} unreachable; best achievable tail is {achievable:e} at rank {rank}")]
    Precision {
        requested: f64,
        achievable: f64,
        rank: usize,
    },

    /// A Cholesky factorization failed after exhausting the jitter ladder.
    #[error("matrix is not positive definite (min eigenvalue estimate {min_eigenvalue:e})")]
    Conditioning { min_eigenvalue: f64 },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("graph is disconnected ({components} components)")]
    Disconnected { components: usize },

    /// The norm-transfer certificate needs the Gram event to hold.
    #[error("norm-transfer certificate unavailable: Gram event does not hold")]
    CertificateUnavailable,

    #[error("invalid configuration:\n  {}", .0.join("\n  "))]
    Config(Vec<String>),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn numerical(msg: impl Into<String>) -> Self {
        Error::Numerical(msg.into())
    }
}
