use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the allocation solvers and their plumbing.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid {field}: {reason}")]
    Validation { field: String, reason: String },

    #[error("failed to parse scenario file {}: {message}", path.display())]
    Parse { path: PathBuf, message: String },

    #[error("i/o error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("latency undefined for worker {worker} on subcarrier {subcarrier}: zero rate with load {load}")]
    UndefinedLatency {
        worker: usize,
        subcarrier: usize,
        load: f64,
    },

    #[error("degenerate dual: the power multiplier nu must be positive")]
    DegenerateDual,

    #[error("latency {latency} s is below the circuit-energy floor {floor} s")]
    InfeasibleLatency { latency: f64, floor: f64 },

    #[error("target infeasible: {0}")]
    InfeasibleTarget(String),

    #[error("scenario too large for enumeration: K={workers}, N={subcarriers} (limit K<=3, N<=4)")]
    EnumerationBound { workers: usize, subcarriers: usize },

    #[error("dimension mismatch: {0}")]
    Dimension(String),
}

impl Error {
    pub(crate) fn validation(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Validation {
            field: field.into(),
            reason: reason.into(),
        }
    }

    /// True for outcomes that mean "no feasible allocation exists" rather than a usage error.
    pub fn is_infeasible(&self) -> bool {
        matches!(
            self,
            Error::InfeasibleLatency { .. } | Error::InfeasibleTarget(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
