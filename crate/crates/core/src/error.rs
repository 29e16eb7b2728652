use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("input violates an invariant: {0}")]
    InvariantViolation(String),

    #[error("ill-conditioned system (condition estimate {condition:.3e} exceeds {limit:.1e})")]
    IllConditioned { condition: f64, limit: f64 },

    #[error("singular system: {0}")]
    Singular(String),

    #[error("did not converge after {iterations} iterations (residual {residual:.3e})")]
    NoConvergence { iterations: usize, residual: f64, history: Vec<f64> },

    #[error("trajectory diverged at site {site} in step {step}")]
    Divergence { site: usize, step: u64 },
}

impl Error {
    /// True for failures of the numerics as opposed to bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::IllConditioned { .. } | Error::Singular(_) | Error::NoConvergence { .. }
        )
    }
}
