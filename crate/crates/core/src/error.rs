use std::path::PathBuf;

/// Errors raised across the library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("parameter out of domain: {0}")]
    ParameterDomain(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("noise variance is unknown for this oracle")]
    UnknownVariance,

    #[error("minibatch noise requires a finite-sum objective")]
    NotFiniteSum,

    #[error("iterate diverged at stage {stage}, iteration {iteration}")]
    Divergence { stage: usize, iteration: u64 },

    #[error("suboptimality {value:e} is negative beyond rounding; the stored optimum is wrong")]
    NegativeSuboptimality { value: f64 },

    #[error("plan profile (mu={plan_mu}, L={plan_l}) does not match oracle (mu={oracle_mu}, L={oracle_l})")]
    ProfileMismatch {
        plan_mu: f64,
        plan_l: f64,
        oracle_mu: f64,
        oracle_l: f64,
    },

    #[error("deterministic solver failed: {0}")]
    SolverFailed(String),

    #[error("invalid experiment spec: {0}")]
    Spec(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn domain(msg: impl Into<String>) -> Error {
    Error::ParameterDomain(msg.into())
}
