use thiserror::Error;

/// Errors raised by the mixture solver.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid state: {0}")]
    InvalidState(String),

    #[error("entropy-variable inversion did not converge after {iterations} iterations (residual {residual:e})")]
    InversionFailed { iterations: usize, residual: f64 },

    #[error("singular matrix: pivot {pivot:e} below threshold {threshold:e}")]
    Singular { pivot: f64, threshold: f64 },

    #[error("time step failed after {halvings} step halvings (last residual {last_residual:e})")]
    StepFailed { halvings: usize, last_residual: f64 },
}

pub type Result<T> = std::result::Result<T, Error>;
