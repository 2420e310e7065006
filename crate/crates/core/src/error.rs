use thiserror::Error;

/// Errors raised across the workbench.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("grid mismatch: {0}")]
    GridMismatch(String),
    #[error("weight is singular at {0:?}")]
    SingularPoint(Vec<f64>),
    #[error("weight {0} is not locally integrable")]
    NonIntegrable(String),
    #[error("zero measure: {0}")]
    ZeroMeasure(String),
    #[error("ball nesting violated: {0}")]
    NestingViolation(String),
    #[error("matrix is not symmetric (|q12 - q21| = {0:e})")]
    Asymmetric(f64),
    #[error("matrix is not positive semidefinite (eigenvalue {0:e})")]
    NotPositiveSemidefinite(f64),
    #[error("data has nonzero mean {0:e}")]
    NonZeroMean(f64),
    #[error("total weight vanishes")]
    ZeroWeight,
    #[error("parse error: {0}")]
    Parse(String),
    #[error("degenerate problem: {0}")]
    Degenerate(String),
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Toml(#[from] toml::de::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
