use thiserror::Error;

use crate::Scheme;

#[derive(Debug, Error)]
pub enum Error {
    #[error("time step {delta} is not below the admissible bound delta_0 = {delta0}")]
    DeltaOutOfRange { delta: f64, delta0: f64 },

    #[error("no convergence after {iterations} iterations (residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("assumption violated: {0}")]
    AssumptionViolated(String),

    #[error("Poisson source has mean {mean:e}, above the solvability tolerance {tolerance:e}")]
    SolvabilityViolated { mean: f64, tolerance: f64 },

    #[error("degenerate fit: {0}")]
    DegenerateFit(String),

    #[error("invalid potential: {0}")]
    InvalidPotential(String),

    #[error("operation needs a symbolic one-dimensional potential")]
    NotSymbolic,

    #[error("scheme {0} is not supported by this operation")]
    UnsupportedScheme(Scheme),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

pub type Result<T> = std::result::Result<T, Error>;
