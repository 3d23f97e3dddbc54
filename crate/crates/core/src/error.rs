use thiserror::Error;

/// Errors raised by the engine.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum BsdeError {
    #[error("invalid time grid: {0}")]
    InvalidGrid(String),
    #[error("invalid intensity: {0}")]
    InvalidIntensity(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("non-finite input: {0}")]
    NonFinite(String),
    #[error("tree with {steps} steps exceeds the cap of {cap}")]
    TreeTooLarge { steps: usize, cap: usize },
    #[error("step-size condition violated at step {step}: dt * C = {product} (must be < 1/2)")]
    StepSize { step: usize, product: f64 },
    #[error("Picard iteration did not converge at step {step} (residual {residual:e})")]
    PicardDivergence { step: usize, residual: f64 },
    #[error("regression failed at step {step}: {reason}")]
    Regression { step: usize, reason: String },
    #[error("driver is not lambda-linear")]
    NotLinear,
    #[error("mismatched inputs: {0}")]
    Mismatch(String),
    #[error("claim: {0}")]
    Claim(String),
    #[error("expression: {0}")]
    Expression(String),
}

impl BsdeError {
    /// True for numerical breakdowns (as opposed to invalid inputs).
    pub fn is_numerical(&self) -> bool {
        matches!(self, BsdeError::PicardDivergence { .. } | BsdeError::Regression { .. })
    }
}

pub type Result<T> = std::result::Result<T, BsdeError>;
