//! Deterministic one-dimensional oracles for the schemes: exact transition
//! densities, grid transfer operators, one-step expectations by
//! Gauss-Hermite quadrature, and invariant densities by power iteration.

use std::f64::consts::PI;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::{Grid, GridFunction};
use crate::integrate::{step, NewtonOptions, SchemeConfig};
use crate::potential::{Polynomial1D, Potential};
use crate::quadrature::GaussHermite;
use crate::util::pairwise_sum;
use crate::Scheme;

fn normal_pdf(z: f64, var: f64) -> f64 {
    (-0.5 * z * z / var).exp() / (2.0 * PI * var).sqrt()
}

fn psi_scalar(p: &Polynomial1D, x: f64, delta: f64) -> Result<f64> {
    crate::integrate::newton_scalar(
        |y| (y + delta * p.dv(y) - x, 1.0 + delta * p.d2v(y)),
        x,
        NewtonOptions::default(),
    )
}

/// Density of `X_1 = y` given `X_0 = x`.
pub fn transition_density(scheme: Scheme, v: &Potential, x: f64, y: f64, delta: f64) -> Result<f64> {
    let p = v.require_symbolic()?;
    if scheme.is_implicit() {
        v.check_delta(delta)?;
    }
    Ok(match scheme {
        Scheme::ExplicitEuler => normal_pdf(y - x + delta * p.dv(x), delta),
        Scheme::SplitStep => normal_pdf(y - psi_scalar(p, x, delta)?, delta),
        Scheme::ImplicitEuler => {
            let phi = y + delta * p.dv(y);
            normal_pdf(phi - x, delta) * (1.0 + delta * p.d2v(y))
        }
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelOptions {
    /// Entries farther than this many noise standard deviations from the
    /// row centre are dropped; `None` keeps full rows.
    pub band_sds: Option<f64>,
}

impl Default for KernelOptions {
    fn default() -> Self {
        Self {
            band_sds: Some(12.0),
        }
    }
}

/// `K[i][j] = p(y_j | x_i) w_j` on a uniform grid, stored as one contiguous
/// band per row.
#[derive(Debug, Clone)]
pub struct TransitionKernel {
    pub scheme: Scheme,
    pub delta: f64,
    pub grid: Grid,
    starts: Vec<usize>,
    rows: Vec<Vec<f64>>,
    /// `max_i (1 - sum_j K[i][j])`.
    pub mass_deficit: f64,
    /// `max_i (sum_j K[i][j] - 1)`, zero up to rounding.
    pub mass_excess: f64,
    potential: Potential,
}

impl TransitionKernel {
    pub fn new(scheme: Scheme, v: &Potential, delta: f64, grid: Grid) -> Result<Self> {
        Self::with_options(scheme, v, delta, grid, KernelOptions::default())
    }

    pub fn with_options(scheme: Scheme, v: &Potential, delta: f64, grid: Grid, opts: KernelOptions) -> Result<Self> {
        let p = v.require_symbolic()?;
        SchemeConfig::new(scheme, delta, v.clone())?;
        let nodes = grid.nodes();
        let weights = grid.weights();
        let sd = delta.sqrt();
        let cut = opts.band_sds.map_or(f64::INFINITY, |s| s * sd);
        // centre coordinate of node j as seen from the noise
        let shifted: Vec<f64> = match scheme {
            Scheme::ImplicitEuler => nodes.iter().map(|&y| y + delta * p.dv(y)).collect(),
            _ => nodes.clone(),
        };
        let jac: Vec<f64> = match scheme {
            Scheme::ImplicitEuler => nodes.iter().map(|&y| 1.0 + delta * p.d2v(y)).collect(),
            _ => vec![1.0; grid.n],
        };
        if jac.iter().any(|&j| j <= 0.0) {
            return Err(Error::AssumptionViolated(
                "1 + delta V'' must be positive on the grid".into(),
            ));
        }
        let built: Vec<(usize, Vec<f64>)> = nodes
            .par_iter()
            .map(|&x| -> Result<(usize, Vec<f64>)> {
                let centre = match scheme {
                    Scheme::ExplicitEuler => x - delta * p.dv(x),
                    Scheme::SplitStep => psi_scalar(p, x, delta)?,
                    Scheme::ImplicitEuler => x,
                };
                let lo = shifted.partition_point(|&s| s < centre - cut);
                let hi = shifted.partition_point(|&s| s <= centre + cut);
                let row = (lo..hi)
                    .map(|j| normal_pdf(shifted[j] - centre, delta) * jac[j] * weights[j])
                    .collect();
                Ok((lo, row))
            })
            .collect::<Result<_>>()?;
        let (starts, rows): (Vec<usize>, Vec<Vec<f64>>) = built.into_iter().unzip();
        let sums: Vec<f64> = rows.iter().map(|r| pairwise_sum(r)).collect();
        let mass_deficit = sums.iter().map(|s| 1.0 - s).fold(0.0, f64::max);
        let mass_excess = sums.iter().map(|s| s - 1.0).fold(0.0, f64::max);
        Ok(Self {
            scheme,
            delta,
            grid,
            starts,
            rows,
            mass_deficit,
            mass_excess,
            potential: v.clone(),
        })
    }

    pub fn row_sum(&self, i: usize) -> f64 {
        pairwise_sum(&self.rows[i])
    }

    /// `K[i][j]`.
    pub fn entry(&self, i: usize, j: usize) -> f64 {
        let s = self.starts[i];
        if j < s {
            return 0.0;
        }
        self.rows[i].get(j - s).copied().unwrap_or(0.0)
    }

    /// `#` header line with the kernel metadata.
    pub fn metadata(&self) -> String {
        format!(
            "kernel scheme = {}, delta = {}, R = [{}, {}], nodes = {}, mass_deficit = {:e}",
            self.scheme, self.delta, self.grid.lo, self.grid.hi, self.grid.n, self.mass_deficit
        )
    }

    fn apply_values(&self, phi: &[f64]) -> Vec<f64> {
        self.rows
            .par_iter()
            .zip(self.starts.par_iter())
            .map(|(row, &s)| row.iter().zip(&phi[s..]).map(|(k, f)| k * f).sum())
            .collect()
    }

    /// `m_j -> sum_i m_i K[i][j]` for node masses `m`.
    fn push_masses(&self, masses: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.grid.n];
        for (i, (row, &s)) in self.rows.iter().zip(&self.starts).enumerate() {
            let m = masses[i];
            if m == 0.0 {
                continue;
            }
            for (o, k) in out[s..].iter_mut().zip(row) {
                *o += m * k;
            }
        }
        out
    }
}

/// `(K phi)(x_i) = sum_j K[i][j] phi(y_j)`, an approximation of `E phi(X_1)`.
pub fn semigroup_apply(k: &TransitionKernel, phi: &GridFunction) -> Result<GridFunction> {
    if phi.grid != k.grid {
        return Err(Error::InvalidArgument("function and kernel grids differ".into()));
    }
    GridFunction::new(k.grid, k.apply_values(&phi.values))
}

/// `K^p phi`, the deterministic `E phi(X_p)`.
pub fn semigroup_power(k: &TransitionKernel, phi: &GridFunction, p: usize) -> Result<GridFunction> {
    let mut f = GridFunction::new(phi.grid, phi.values.clone())?;
    for _ in 0..p {
        f = semigroup_apply(k, &f)?;
    }
    Ok(f)
}

/// Stationary density of the kernel: power iteration on node masses until
/// the L1 change is at most `tol`. Starts from the Gibbs density.
pub fn invariant_density(k: &TransitionKernel, tol: f64, max_iter: usize) -> Result<GridFunction> {
    let grid = k.grid;
    let w = grid.weights();
    let p = k.potential.require_symbolic()?;
    let vmin = grid.nodes().iter().map(|&x| p.value(x)).fold(f64::INFINITY, f64::min);
    let mut density: Vec<f64> = grid
        .nodes()
        .iter()
        .map(|&x| (-2.0 * (p.value(x) - vmin)).exp())
        .collect();
    normalize(&grid, &mut density);
    let mut change = f64::INFINITY;
    for _ in 0..max_iter {
        let masses: Vec<f64> = density.iter().zip(&w).map(|(d, w)| d * w).collect();
        let pushed = k.push_masses(&masses);
        let mut next: Vec<f64> = pushed.iter().zip(&w).map(|(m, w)| m / w).collect();
        normalize(&grid, &mut next);
        let diff: Vec<f64> = next.iter().zip(&density).map(|(a, b)| (a - b).abs()).collect();
        change = grid.integrate(&diff);
        density = next;
        if change <= tol {
            return GridFunction::new(grid, density);
        }
    }
    Err(Error::NoConvergence {
        iterations: max_iter,
        residual: change,
    })
}

fn normalize(grid: &Grid, values: &mut [f64]) {
    let z = grid.integrate(values);
    values.iter_mut().for_each(|v| *v /= z);
}

/// Gauss-Hermite points used by [`one_step_expectation`].
pub const EXPECTATION_POINTS: usize = 96;

/// `E phi(X_1)` from `X_0 = x` by Gauss-Hermite quadrature over the noise.
pub fn one_step_expectation(cfg: &SchemeConfig, x: f64, phi: impl Fn(f64) -> f64) -> Result<f64> {
    let gh = GaussHermite::new(EXPECTATION_POINTS);
    let mut acc = Vec::with_capacity(gh.nodes.len());
    for (z, w) in gh.nodes.iter().zip(&gh.weights) {
        acc.push(w * phi(step(cfg, &[x], &[*z])?[0]));
    }
    Ok(pairwise_sum(&acc))
}
