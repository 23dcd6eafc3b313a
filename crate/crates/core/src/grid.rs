//! Uniform one-dimensional grids and functions sampled on them.

use crate::error::{Error, Result};
use crate::symbolic::Expr;
use crate::util::pairwise_sum;

/// Uniform grid on `[lo, hi]` with `n` nodes and trapezoid weights.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid {
    pub lo: f64,
    pub hi: f64,
    pub n: usize,
}

impl Grid {
    pub fn new(lo: f64, hi: f64, n: usize) -> Result<Self> {
        if !(lo < hi) || n < 3 || !lo.is_finite() || !hi.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "grid needs lo < hi and at least 3 nodes (got [{lo}, {hi}], {n})"
            )));
        }
        Ok(Self { lo, hi, n })
    }

    /// `[-radius, radius]` with `n` nodes.
    pub fn symmetric(radius: f64, n: usize) -> Result<Self> {
        Self::new(-radius, radius, n)
    }

    /// Default diagnostic grid for the operator and stationary layers:
    /// `[-6, 6]` with 2049 nodes.
    pub fn standard() -> Self {
        Self {
            lo: -6.0,
            hi: 6.0,
            n: 2049,
        }
    }

    pub fn spacing(&self) -> f64 {
        (self.hi - self.lo) / (self.n - 1) as f64
    }

    pub fn node(&self, i: usize) -> f64 {
        if i + 1 == self.n {
            self.hi
        } else {
            self.lo + i as f64 * self.spacing()
        }
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.node(i)).collect()
    }

    pub fn weight(&self, i: usize) -> f64 {
        let h = self.spacing();
        if i == 0 || i + 1 == self.n {
            0.5 * h
        } else {
            h
        }
    }

    pub fn weights(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.weight(i)).collect()
    }

    /// Trapezoid rule for node values.
    pub fn integrate(&self, values: &[f64]) -> f64 {
        debug_assert_eq!(values.len(), self.n);
        let terms: Vec<f64> = values
            .iter()
            .enumerate()
            .map(|(i, v)| v * self.weight(i))
            .collect();
        pairwise_sum(&terms)
    }

    /// Indices of nodes with `|x| <= radius`.
    pub fn indices_within(&self, radius: f64) -> impl Iterator<Item = usize> + '_ {
        (0..self.n).filter(move |&i| self.node(i).abs() <= radius + 1e-12)
    }
}

/// Values of a scalar function on a [`Grid`], optionally tagged with the
/// exact polynomial it samples.
#[derive(Debug, Clone, PartialEq)]
pub struct GridFunction {
    pub grid: Grid,
    pub values: Vec<f64>,
    pub expr: Option<Expr>,
}

impl GridFunction {
    pub fn new(grid: Grid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.n {
            return Err(Error::InvalidArgument(format!(
                "{} values for a grid of {} nodes",
                values.len(),
                grid.n
            )));
        }
        Ok(Self {
            grid,
            values,
            expr: None,
        })
    }

    /// Samples `expr` (eta-free) at the nodes and keeps it as the tag.
    pub fn from_expr(grid: Grid, expr: &Expr) -> Self {
        let coeffs = expr.to_float_coeffs();
        let values = grid
            .nodes()
            .into_iter()
            .map(|x| crate::symbolic::horner(&coeffs, x))
            .collect();
        Self {
            grid,
            values,
            expr: Some(expr.clone()),
        }
    }

    pub fn from_fn(grid: Grid, f: impl Fn(f64) -> f64) -> Self {
        Self {
            grid,
            values: grid.nodes().into_iter().map(f).collect(),
            expr: None,
        }
    }

    pub fn constant(grid: Grid, c: f64) -> Self {
        Self {
            grid,
            values: vec![c; grid.n],
            expr: None,
        }
    }

    pub fn integral(&self) -> f64 {
        self.grid.integrate(&self.values)
    }

    /// `int f g` by the trapezoid rule.
    pub fn inner(&self, other: &GridFunction) -> f64 {
        let prod: Vec<f64> = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a * b)
            .collect();
        self.grid.integrate(&prod)
    }

    pub fn max_abs_within(&self, radius: f64) -> f64 {
        self.grid
            .indices_within(radius)
            .map(|i| self.values[i].abs())
            .fold(0.0, f64::max)
    }

    pub fn max_abs_diff_within(&self, other: &GridFunction, radius: f64) -> f64 {
        self.grid
            .indices_within(radius)
            .map(|i| (self.values[i] - other.values[i]).abs())
            .fold(0.0, f64::max)
    }

    /// CSV rows `x,value` preceded by the given `#` header lines.
    pub fn to_csv(&self, header: &[String]) -> String {
        let mut out = String::new();
        for line in header {
            out.push_str("# ");
            out.push_str(line);
            out.push('\n');
        }
        if let Some(e) = &self.expr {
            out.push_str(&format!("# expr = {e}\n"));
        }
        out.push_str("x,value\n");
        for (i, v) in self.values.iter().enumerate() {
            out.push_str(&format!("{:.12e},{:.17e}\n", self.grid.node(i), v));
        }
        out
    }
}
