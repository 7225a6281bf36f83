use thiserror::Error;

/// Failures raised by the numerical routines.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("window mismatch: expected [{expected_lo}, {expected_hi}], got [{got_lo}, {got_hi}]")]
    WindowMismatch {
        expected_lo: i64,
        expected_hi: i64,
        got_lo: i64,
        got_hi: i64,
    },
    #[error("domain error: {0}")]
    Domain(String),
    #[error("restricted map on the unstable fiber at index {index} is singular (sigma_min/|A| = {ratio:e})")]
    SingularRestriction { index: i64, ratio: f64 },
    #[error("cocycle product overflowed after {steps} steps")]
    Overflow { steps: i64 },
    #[error("constraint system is numerically rank deficient (ratio {ratio:e})")]
    RankDeficient { ratio: f64 },
    #[error("reconstructed operator is not a projection: {defect} = {value:e} exceeds {tolerance:e}")]
    NotAProjection {
        defect: &'static str,
        value: f64,
        tolerance: f64,
    },
    #[error("backward continuation is ill conditioned at step {step} (condition {condition:e})")]
    IllConditionedBackward { step: i64, condition: f64 },
    #[error("detection failed at base index {index}: {defect} = {value:e} exceeds {tolerance:e}")]
    DetectionFailure {
        index: i64,
        defect: String,
        value: f64,
        tolerance: f64,
    },
    #[error("degenerate generator: R[{column}] vanished at step {step}")]
    Degenerate { step: u64, column: usize },
    #[error("no spectral gap at zero: min |lambda| = {min_abs:e} below {tolerance:e}")]
    NoGap { min_abs: f64, tolerance: f64 },
    #[error("orbit returned only {found} of {wanted} times within {cap} steps")]
    NoReturn { found: usize, wanted: usize, cap: u64 },
    #[error("fixed-point iteration did not converge in {iterations} iterations (last step {last_step:e})")]
    NoConvergence { iterations: usize, last_step: f64 },
    #[error("invalid input: {0}")]
    InvalidInput(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// True for failures that reflect the numerics of a valid input rather than a malformed request.
    pub fn is_numeric(&self) -> bool {
        !matches!(self, Error::InvalidInput(_) | Error::WindowMismatch { .. } | Error::Domain(_))
    }
}
