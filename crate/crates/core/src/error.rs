use thiserror::Error;

use crate::msgnet::MsgError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Pipeline phase, attached to errors raised inside [`crate::solver::solve`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Distribute,
    Trd,
    Sept,
    Hit,
    Verify,
}

impl std::fmt::Display for Phase {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Phase::Distribute => "distribute",
            Phase::Trd => "trd",
            Phase::Sept => "sept",
            Phase::Hit => "hit",
            Phase::Verify => "verify",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("usage error: {0}")]
    Usage(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error(
        "matrix is not symmetric: |a[{i}][{j}] - a[{j}][{i}]| = {diff:e} exceeds tolerance {tol:e}"
    )]
    NotSymmetric {
        i: usize,
        j: usize,
        diff: f64,
        tol: f64,
    },

    #[error("inverse iteration did not converge for eigenvalue index {index}")]
    NoConvergence { index: usize },

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error(transparent)]
    Msg(#[from] MsgError),

    #[error("{phase} phase failed: {source}")]
    InPhase {
        phase: Phase,
        #[source]
        source: Box<Error>,
    },

    #[error("tuning run {config} failed: {source}")]
    Tuning {
        config: String,
        #[source]
        source: Box<Error>,
    },

    #[error("matrix file: {0}")]
    Parse(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl Error {
    pub fn in_phase(self, phase: Phase) -> Error {
        match self {
            e @ Error::InPhase { .. } => e,
            e => Error::InPhase {
                phase,
                source: Box::new(e),
            },
        }
    }

    /// Strips phase and tuning wrappers.
    pub fn root(&self) -> &Error {
        match self {
            Error::InPhase { source, .. } | Error::Tuning { source, .. } => source.root(),
            e => e,
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
