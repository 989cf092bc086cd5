use thiserror::Error;

/// Errors raised by the numerical routines of this crate.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("out of domain: {what} (t = {t})")]
    OutOfDomain { what: &'static str, t: f64 },
    #[error("non-finite value in {what}{}", step.map(|s| format!(" at step {s}")).unwrap_or_default())]
    NonFinite { what: &'static str, step: Option<usize> },
    #[error("degenerate fit: {0}")]
    DegenerateFit(String),
    #[error("quadrature did not converge (estimated error {error:e}, tolerance {tolerance:e})")]
    QuadratureNoConvergence { error: f64, tolerance: f64 },
    #[error("unsupported method: {0}")]
    UnsupportedMethod(&'static str),
    #[error("second derivative of the schedule is unavailable at t = {0}")]
    SecondDerivativeUnavailable(f64),
    #[error("invalid dimension {0}")]
    InvalidDimension(usize),
    #[error("Bessel ratio argument {0} exceeds the overflow guard")]
    Overflow(f64),
    #[error("invalid parameters: {0}")]
    InvalidParameters(String),
    #[error("N = {0} is too small for the early-stopping rule (need N >= 3)")]
    NTooSmall(usize),
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("instance too large: n = {n} exceeds {max}")]
    TooLarge { n: usize, max: usize },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
