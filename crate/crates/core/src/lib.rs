//! Weak backward error analysis for overdamped Langevin dynamics
//! `dX = -V'(X) dt + dW`.
//!
//! The crate simulates the implicit split-step and implicit Euler schemes,
//! derives the modified Kolmogorov generators `L_n` of these schemes with
//! exact rational arithmetic, computes the corrections `mu_n` of the invariant
//! measure, and provides deterministic grid oracles (transfer operators,
//! Kolmogorov PDE solvers) to measure weak orders and long-time bias.

use std::fmt;
use std::str::FromStr;

pub mod error;
pub mod grid;
pub mod integrate;
pub mod markov;
pub mod operators;
pub mod potential;
pub mod quadrature;
pub mod reference;
pub mod stationary;
pub mod stencil;
pub mod symbolic;
pub mod util;

pub use error::{Error, Result};
pub use grid::{Grid, GridFunction};
pub use operators::DiffOp;
pub use potential::Potential;
pub use symbolic::{Expr, Rational};

/// One-step integrator for the overdamped Langevin equation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Scheme {
    /// `X + dt * f(X) + sqrt(dt) * eta`.
    ExplicitEuler,
    /// `Y = X - dt V'(Y) + sqrt(dt) eta`.
    ImplicitEuler,
    /// `X* = X - dt V'(X*)`, then `X* + sqrt(dt) eta`.
    SplitStep,
}

impl Scheme {
    pub fn name(self) -> &'static str {
        match self {
            Scheme::ExplicitEuler => "explicit_euler",
            Scheme::ImplicitEuler => "implicit_euler",
            Scheme::SplitStep => "split_step",
        }
    }

    pub fn is_implicit(self) -> bool {
        !matches!(self, Scheme::ExplicitEuler)
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "explicit_euler" => Ok(Scheme::ExplicitEuler),
            "implicit_euler" => Ok(Scheme::ImplicitEuler),
            "split_step" => Ok(Scheme::SplitStep),
            other => Err(Error::Parse(format!("unknown scheme {other:?}"))),
        }
    }
}
