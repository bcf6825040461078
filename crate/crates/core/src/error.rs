use thiserror::Error;

/// Errors produced by the analysis, simulation and monitoring routines.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("matrix is not row-stochastic: {0}")]
    NotStochastic(String),

    #[error("chain is not absorbing: {0}")]
    NotAbsorbing(String),

    #[error("chain has no transient states")]
    NoTransientStates,

    #[error("I - Q is numerically singular (condition estimate {condition:e})")]
    SingularMatrix { condition: f64 },

    #[error("batch of {cells} cells exceeds the memory budget of {budget} cells")]
    ResourceLimit { cells: u64, budget: u64 },

    #[error("need at least {needed} samples, got {got}")]
    InsufficientData { needed: usize, got: usize },

    #[error("input is empty")]
    EmptyInput,

    #[error("tail fit needs at least 3 points above the noise floor, got {usable}")]
    InsufficientTail { usable: usize },

    #[error("event timestamp {got} precedes previous timestamp {previous}")]
    OutOfOrder { previous: u64, got: u64 },

    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },

    #[error("cannot step from the terminal state")]
    Terminal,

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_probability(name: &str, p: f64) -> Result<()> {
    if p.is_finite() && p > 0.0 && p <= 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!(
            "{name} must lie in (0, 1], got {p}"
        )))
    }
}
