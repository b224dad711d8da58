//! Error type shared across the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("singular Hessian: {0}")]
    SingularHessian(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid sampling distribution: {0}")]
    InvalidDistribution(String),

    #[error("sketched factor is rank-deficient after retry with doubled sketch size")]
    RankDeficientSketch,

    #[error("too many failed trials: {failed} of {total}")]
    TooManyFailures { failed: usize, total: usize },

    #[error("no convergence: {0}")]
    NoConvergence(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, Error>;
