use thiserror::Error;

/// Errors raised by the evaluation engine, the oracles and the simulator.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum AsepError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// A τ-dependent denominator vanished (τ = 1 or a root of unity).
    #[error("degenerate parameter: {0}")]
    DegenerateParameter(String),

    /// Negative power of zero, e.g. the raw prefactor at τ = 0.
    #[error("singular parameter: {0}")]
    SingularParameter(String),

    #[error("domain error: {0}")]
    Domain(String),

    /// A denominator of the integrand or of a transfer matrix vanished.
    #[error("pole: {0}")]
    Pole(String),

    #[error("resource limit: {0}")]
    Resource(String),

    #[error("division by zero")]
    DivisionByZero,

    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, AsepError>;
