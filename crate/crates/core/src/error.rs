use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("validation error: {0}")]
    Validation(String),

    #[error("resolution error: {0}")]
    Resolution(String),

    #[error("solvability error: {0}")]
    Solvability(String),

    #[error("non-convergence: {0}")]
    NonConvergence(String),

    #[error("step-size error: {0}")]
    StepSize(String),

    #[error("dependency error: {0}")]
    Dependency(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("estimation-quality error: {0}")]
    EstimationQuality(String),

    #[error("mixing-violation: {0}")]
    MixingViolation(String),

    #[error("truncation error: {0}")]
    Truncation(String),

    #[error("precision warning escalated in strict mode: {0}")]
    Precision(String),

    #[error("stage ordering error: {0}")]
    Ordering(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("format error: {0}")]
    Format(String),
}

pub type Result<T> = std::result::Result<T, Error>;
