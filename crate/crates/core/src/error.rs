use thiserror::Error;

/// Errors raised by the polytope, geometry, integration and cooling layers.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum RhmcError {
    /// Malformed input: dimension mismatch, non-finite values, bad parameters.
    #[error("input: {0}")]
    Input(String),
    /// A point is on or outside the boundary, or too close to it to trust.
    #[error("boundary: {0}")]
    Boundary(String),
    /// The metric factorization failed or produced non-finite values.
    #[error("numerical: {0}")]
    Numerical(String),
    /// Velocity blew up during integration; usually an unbounded body.
    #[error("divergence: {0}")]
    Divergence(String),
    /// An iterative solver ran out of iterations.
    #[error("no convergence: {0}")]
    NoConvergence(String),
    /// A sampler run or cooling phase failed as a whole.
    #[error("sampler: {0}")]
    Sampler(String),
}

pub type Result<T> = std::result::Result<T, RhmcError>;

impl RhmcError {
    pub(crate) fn input(msg: impl Into<String>) -> Self {
        RhmcError::Input(msg.into())
    }

    pub(crate) fn boundary(msg: impl Into<String>) -> Self {
        RhmcError::Boundary(msg.into())
    }

    pub(crate) fn numerical(msg: impl Into<String>) -> Self {
        RhmcError::Numerical(msg.into())
    }
}
