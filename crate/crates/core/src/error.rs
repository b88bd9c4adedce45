use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("lambda must be positive and finite, got {0}")]
    NonPositiveLambda(f64),
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),
    #[error("length mismatch: expected {expected}, found {found}")]
    LengthMismatch { expected: usize, found: usize },
    #[error("absolute continuity violated at index {index}: q > 0 where p = 0")]
    AbsoluteContinuity { index: usize },
    #[error("matrix is not symmetric (max asymmetry {0:e})")]
    Asymmetric(f64),
    #[error("projection columns are not orthonormal (max deviation {0:e})")]
    NotOrthonormal(f64),
    #[error("target tau = {tau} is not attainable: {reason}")]
    InfeasibleTarget { tau: f64, reason: String },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("divergence {target} unreachable; the largest attainable is {max}")]
    UnreachableDivergence { target: f64, max: f64 },
    #[error("class {class} would keep no samples")]
    DegenerateClass { class: i64 },
    #[error("missing class: {0}")]
    MissingClass(&'static str),
    #[error("domain error: {0}")]
    Domain(String),
}

pub(crate) fn check_lambda(lambda: f64) -> Result<()> {
    if lambda > 0.0 && lambda.is_finite() {
        Ok(())
    } else {
        Err(Error::NonPositiveLambda(lambda))
    }
}
