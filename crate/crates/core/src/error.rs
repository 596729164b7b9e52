use thiserror::Error;

/// Errors shared across the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("term budget exceeded: {terms} terms requested, limit {limit}")]
    TermBudget { terms: u128, limit: u128 },

    #[error("extinction integral unavailable: Grey's condition {verdict:?}")]
    GreyNotSatisfied {
        verdict: crate::mechanism::GreyVerdict,
    },

    #[error("mechanism must be critical (drift = 0), got drift {alpha}")]
    NotCritical { alpha: f64 },

    #[error("did not converge: {0}")]
    NonConvergence(String),

    #[error("series overflow: intermediate term {term:e} exceeds {limit:e}")]
    Overflow { term: f64, limit: f64 },

    #[error("accuracy loss: {0}")]
    Accuracy(String),

    #[error("argument {value:e} outside tabulated range [{lo:e}, {hi:e}]")]
    OutOfRange { value: f64, lo: f64, hi: f64 },

    #[error("bracketing failed: {0}")]
    Bracket(String),

    #[error("invalid specification: {0}")]
    InvalidSpec(String),
}

impl Error {
    pub fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidSpec(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
