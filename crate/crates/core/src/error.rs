use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A parameter or configuration field is out of its allowed range.
    #[error("invalid `{field}`: {reason}")]
    InvalidParameter { field: &'static str, reason: String },

    #[error("config {path}: {message}")]
    Config { path: PathBuf, message: String },

    #[error("process is not stationary: <log lambda> = {mean_log_lambda} must be negative")]
    NotStationary { mean_log_lambda: f64 },

    #[error("stationary density needs mu > 0 (got {mu}); the normalization diverges")]
    DivergentNormalization { mu: f64 },

    #[error("log-moments undefined: lambda = 1 + q0*r reaches zero or below")]
    NonPositiveMultiplier,

    #[error("quadrature did not converge: achieved {achieved:e}, requested {requested:e}")]
    Quadrature { achieved: f64, requested: f64 },

    #[error("budget diverged (exceeded 1e300) for agent {agent} in run {run}")]
    Diverged { run: usize, agent: usize },

    #[error("ensemble needs {required} bytes, budget is {budget} bytes")]
    MemoryBudget { required: u64, budget: u64 },

    #[error("no positive samples ({excluded} non-positive values excluded)")]
    EmptySample { excluded: usize },

    #[error("need at least {needed} samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },

    #[error("histogram is flat; no mode defined")]
    FlatHistogram,

    #[error("regressor a/q0^2 is constant; slope is not identifiable")]
    DegenerateRegressor,

    #[error("{0}")]
    Unsupported(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn invalid(field: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            field,
            reason: reason.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code: 2 config, 3 I/O, 4 domain.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidParameter { .. } | Error::Config { .. } | Error::MemoryBudget { .. } => 2,
            Error::Io { .. } => 3,
            _ => 4,
        }
    }
}
