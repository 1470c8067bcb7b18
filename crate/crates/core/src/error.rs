use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// A run parameter is outside its admissible range.
    #[error("invalid configuration: {0}")]
    Config(String),

    /// An argument is outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("fixed-point iteration did not converge after {iterations} iterations (last iterate {last}, residual {residual:e})")]
    NoConvergence {
        iterations: usize,
        last: f64,
        residual: f64,
    },

    #[error("singular linear system: {0}")]
    Singular(String),

    /// The exact oracle refuses state spaces that do not fit on a desk.
    #[error("state space too large: {states} states exceeds the limit of {limit}")]
    StateSpaceTooLarge { states: u128, limit: u128 },

    #[error("insufficient data: {0}")]
    InsufficientData(String),
}
