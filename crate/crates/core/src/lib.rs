//! Exact and numerical evaluation of `P(x_ℓ(t) ≤ x)` for the asymmetric
//! simple exclusion process started from (periodic) step Bernoulli data.

pub mod cli;
pub mod error;
pub mod kernel;
pub mod oracle;
pub mod quadrature;
pub mod scalar;
pub mod simulator;

pub use error::{AsepError, Result};
