use thiserror::Error;

/// Errors produced by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid model spec: {0}")]
    InvalidSpec(String),

    #[error("invalid evaluation point {re}{im:+}i: {reason}")]
    InvalidPoint { re: f64, im: f64, reason: String },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("linear solve failed: {0}")]
    LinearSolve(String),

    /// Fixed-point iteration ran out of iterations. Carries the last iterate
    /// so callers can inspect how far the solve got.
    #[error(
        "fixed-point solver did not converge after {iterations} iterations \
         (residual {residual:.3e} at z = {z_re}{z_im:+}i)"
    )]
    NoConvergence {
        z_re: f64,
        z_im: f64,
        delta_re: f64,
        delta_im: f64,
        delta_tilde_re: f64,
        delta_tilde_im: f64,
        residual: f64,
        iterations: usize,
    },

    #[error("grid solve failed at point {index}: {source}")]
    GridPoint {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("replicate {index} failed: {source}")]
    Replicate {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("eigenvalue separation failure: {0}")]
    SeparationFailure(String),

    #[error("quadrature: {0}")]
    Quadrature(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("numerical guard tripped: {0}")]
    Numerical(String),
}

pub type Result<T> = std::result::Result<T, Error>;
