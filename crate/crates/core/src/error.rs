use thiserror::Error;

/// Failure modes shared by every module.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("quadrature did not converge (estimated absolute error {estimate:e})")]
    Quadrature { estimate: f64 },
    #[error("resolution error: {0}")]
    Resolution(String),
    #[error("t = {t} outside trajectory horizon [0, {horizon}]")]
    Range { t: f64, horizon: f64 },
    #[error("unsupported state: {0}")]
    UnsupportedState(String),
    #[error("shape mismatch: expected dimension {expected}, got {got}")]
    Shape { expected: usize, got: usize },
    #[error("singular geometry: {0}")]
    SingularGeometry(String),
    #[error("zero signal: {0}")]
    ZeroSignal(String),
    #[error("validity error: {0}")]
    Validity(String),
    #[error("inversion domain: sample mean {mean} outside [{lo}, {hi}]")]
    InversionDomain { mean: f64, lo: f64, hi: f64 },
    #[error("indeterminate ratio: {0}")]
    Indeterminate(String),
    #[error("optimizer bracket failure: {message}")]
    Bracket {
        message: String,
        profile: Vec<(f64, f64)>,
    },
    #[error("insufficient span: {0}")]
    InsufficientSpan(String),
    #[error("internal consistency error: {0}")]
    Internal(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn domain(msg: impl Into<String>) -> Error {
    Error::Domain(msg.into())
}
