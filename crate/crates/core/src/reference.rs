//! Deterministic PDE references: the Kolmogorov equation `u_t = L u`, the
//! modified-flow cascade `v_n`, and decay-rate fits.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::grid::{Grid, GridFunction};
use crate::operators::{Derivation, DiffOp};
use crate::potential::{Polynomial1D, Potential};
use crate::stencil;
use crate::symbolic::{horner, Expr};
use crate::util::fit_line;
use crate::Scheme;

/// Stencil accuracy for the cascade sources `F_n`.
pub const SOURCE_ACCURACY: usize = 6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PdeConfig {
    pub grid: Grid,
    /// Requested time step; shortened so that `t_end` is hit exactly.
    pub dt: f64,
    pub t_end: f64,
    /// Keep every `stride`-th step (the final time is always kept).
    pub stride: usize,
}

impl PdeConfig {
    /// `dt = h`, keeping every step.
    pub fn new(grid: Grid, t_end: f64) -> Result<Self> {
        Self::with_dt(grid, grid.spacing(), t_end, 1)
    }

    pub fn with_dt(grid: Grid, dt: f64, t_end: f64, stride: usize) -> Result<Self> {
        if !(dt > 0.0) || !(t_end >= 0.0) || dt > grid.spacing() * (1.0 + 1e-12) || stride == 0 {
            return Err(Error::InvalidArgument(format!(
                "PDE needs 0 < dt <= h = {}, t_end >= 0 and stride >= 1 (dt = {dt}, t_end = {t_end})",
                grid.spacing()
            )));
        }
        Ok(Self {
            grid,
            dt,
            t_end,
            stride,
        })
    }

    fn steps(&self) -> (usize, f64) {
        if self.t_end == 0.0 {
            return (0, self.dt);
        }
        let n = (self.t_end / self.dt - 1e-9).ceil().max(1.0) as usize;
        (n, self.t_end / n as f64)
    }
}

/// Snapshots `u(t_k, .)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeries {
    pub times: Vec<f64>,
    pub snapshots: Vec<GridFunction>,
}

impl TimeSeries {
    pub fn last(&self) -> &GridFunction {
        self.snapshots.last().expect("at least the initial snapshot")
    }

    /// Rows `t,x,value` for every `stride`-th snapshot.
    pub fn to_csv(&self, header: &[String], stride: usize) -> String {
        let mut out = String::new();
        for line in header {
            let _ = writeln!(out, "# {line}");
        }
        out.push_str("t,x,value\n");
        let stride = stride.max(1);
        for (k, (t, f)) in self.times.iter().zip(&self.snapshots).enumerate() {
            if k % stride != 0 && k + 1 != self.times.len() {
                continue;
            }
            for (i, v) in f.values.iter().enumerate() {
                let _ = writeln!(out, "{t:.12e},{:.12e},{v:.17e}", f.grid.node(i));
            }
        }
        out
    }
}

/// Finite-volume form of `L u = (rho u')' / (2 rho)` with zero flux at the
/// ends: tridiagonal `lower[i] u_{i-1} + diag[i] u_i + upper[i] u_{i+1}`.
#[derive(Debug, Clone)]
struct Generator {
    lower: Vec<f64>,
    diag: Vec<f64>,
    upper: Vec<f64>,
}

impl Generator {
    fn new(p: &Polynomial1D, grid: &Grid) -> Self {
        let n = grid.n;
        let h = grid.spacing();
        let mut lower = vec![0.0; n];
        let mut upper = vec![0.0; n];
        let mut diag = vec![0.0; n];
        for i in 0..n {
            let x = grid.node(i);
            let vi = p.value(x);
            let w = grid.weight(i);
            if i + 1 < n {
                let ratio = (-2.0 * (p.value(x + 0.5 * h) - vi)).exp();
                upper[i] = ratio / (2.0 * w * h);
            }
            if i > 0 {
                let ratio = (-2.0 * (p.value(x - 0.5 * h) - vi)).exp();
                lower[i] = ratio / (2.0 * w * h);
            }
            diag[i] = -(lower[i] + upper[i]);
        }
        Self { lower, diag, upper }
    }

    fn apply(&self, u: &[f64]) -> Vec<f64> {
        let n = u.len();
        (0..n)
            .map(|i| {
                let mut acc = self.diag[i] * u[i];
                if i > 0 {
                    acc += self.lower[i] * u[i - 1];
                }
                if i + 1 < n {
                    acc += self.upper[i] * u[i + 1];
                }
                acc
            })
            .collect()
    }

    /// Solves `(I - s A) x = rhs` (Thomas algorithm).
    fn solve_shifted(&self, s: f64, rhs: &[f64]) -> Vec<f64> {
        let n = rhs.len();
        let mut c = vec![0.0; n];
        let mut d = vec![0.0; n];
        let b0 = 1.0 - s * self.diag[0];
        c[0] = -s * self.upper[0] / b0;
        d[0] = rhs[0] / b0;
        for i in 1..n {
            let a = -s * self.lower[i];
            let m = 1.0 - s * self.diag[i] - a * c[i - 1];
            c[i] = if i + 1 < n { -s * self.upper[i] / m } else { 0.0 };
            d[i] = (rhs[i] - a * d[i - 1]) / m;
        }
        let mut x = vec![0.0; n];
        x[n - 1] = d[n - 1];
        for i in (0..n - 1).rev() {
            x[i] = d[i] - c[i] * x[i + 1];
        }
        x
    }

    /// One trapezoidal step with sources `f0` (old time) and `f1` (new time).
    fn step(&self, u: &[f64], dt: f64, f0: Option<&[f64]>, f1: Option<&[f64]>) -> Vec<f64> {
        let au = self.apply(u);
        let mut rhs: Vec<f64> = u.iter().zip(&au).map(|(a, b)| a + 0.5 * dt * b).collect();
        if let (Some(f0), Some(f1)) = (f0, f1) {
            for i in 0..rhs.len() {
                rhs[i] += 0.5 * dt * (f0[i] + f1[i]);
            }
        }
        self.solve_shifted(0.5 * dt, &rhs)
    }
}

/// Polynomial-coefficient operator applied to grid values by stencils.
struct GridOperator {
    coeffs: Vec<Option<Vec<f64>>>,
    h: f64,
}

impl GridOperator {
    fn new(op: &DiffOp, grid: &Grid) -> Self {
        let nodes = grid.nodes();
        let coeffs = op
            .coeffs()
            .iter()
            .map(|c| {
                (!c.is_zero()).then(|| {
                    let f = c.to_float_coeffs();
                    nodes.iter().map(|&x| horner(&f, x)).collect()
                })
            })
            .collect();
        Self {
            coeffs,
            h: grid.spacing(),
        }
    }

    fn apply(&self, u: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; u.len()];
        for (j, c) in self.coeffs.iter().enumerate() {
            if let Some(c) = c {
                let d = stencil::derivative(u, self.h, j, SOURCE_ACCURACY);
                for i in 0..out.len() {
                    out[i] += c[i] * d[i];
                }
            }
        }
        out
    }
}

/// `u(t, x) = E phi(X_x(t))` from `u_t = L u`, `u(0) = phi`.
pub fn solve_kolmogorov(v: &Potential, phi: &Expr, cfg: &PdeConfig) -> Result<TimeSeries> {
    let flow = cascade(v, phi, &[], cfg)?;
    Ok(flow.into_iter().next().expect("v_0"))
}

/// Solves `v_0, ..., v_N` with `(d/dt - L) v_n = sum_{l=1}^n L_l v_{n-l}`,
/// `v_0(0) = phi`, `v_n(0) = 0`, all orders advanced together.
fn cascade(v: &Potential, phi: &Expr, ops: &[DiffOp], cfg: &PdeConfig) -> Result<Vec<TimeSeries>> {
    let p = v.require_symbolic()?;
    let grid = cfg.grid;
    let gen = Generator::new(p, &grid);
    let sources: Vec<GridOperator> = ops.iter().map(|op| GridOperator::new(op, &grid)).collect();
    let order = ops.len();
    let (steps, dt) = cfg.steps();
    let initial = GridFunction::from_expr(grid, phi);
    let mut state: Vec<Vec<f64>> = (0..=order)
        .map(|n| if n == 0 { initial.values.clone() } else { vec![0.0; grid.n] })
        .collect();
    let forcing = |state: &[Vec<f64>], n: usize| -> Vec<f64> {
        let mut f = vec![0.0; grid.n];
        for l in 1..=n {
            let term = sources[l - 1].apply(&state[n - l]);
            for (a, b) in f.iter_mut().zip(term) {
                *a += b;
            }
        }
        f
    };
    let mut old_f: Vec<Vec<f64>> = (0..=order).map(|n| forcing(&state, n)).collect();
    let mut out: Vec<TimeSeries> = (0..=order)
        .map(|n| TimeSeries {
            times: vec![0.0],
            snapshots: vec![if n == 0 {
                initial.clone()
            } else {
                GridFunction::constant(grid, 0.0)
            }],
        })
        .collect();
    for k in 1..=steps {
        let mut next: Vec<Vec<f64>> = Vec::with_capacity(order + 1);
        let mut new_f: Vec<Vec<f64>> = Vec::with_capacity(order + 1);
        for n in 0..=order {
            let f1 = forcing(&next, n);
            let u = if n == 0 {
                gen.step(&state[0], dt, None, None)
            } else {
                gen.step(&state[n], dt, Some(&old_f[n]), Some(&f1))
            };
            next.push(u);
            new_f.push(f1);
        }
        state = next;
        old_f = new_f;
        if k % cfg.stride == 0 || k == steps {
            let t = k as f64 * dt;
            for (series, values) in out.iter_mut().zip(&state) {
                series.times.push(t);
                series.snapshots.push(GridFunction::new(grid, values.clone())?);
            }
        }
    }
    Ok(out)
}

/// Components `v_n` (independent of `delta`) and their combination.
#[derive(Debug, Clone)]
pub struct ModifiedFlow {
    pub components: Vec<TimeSeries>,
    pub combined: TimeSeries,
}

/// `v^{(N)} = sum_{n<=N} delta^n v_n` of the modified flow of `scheme`.
pub fn solve_modified_flow(
    v: &Potential,
    phi: &Expr,
    scheme: Scheme,
    order: usize,
    delta: f64,
    cfg: &PdeConfig,
) -> Result<ModifiedFlow> {
    v.check_delta(delta)?;
    let mut d = Derivation::new(v, scheme)?;
    let ops: Vec<DiffOp> = (1..=order).map(|l| d.modified_generator(l)).collect();
    let components = cascade(v, phi, &ops, cfg)?;
    let combined = combine(&components, delta)?;
    Ok(ModifiedFlow {
        components,
        combined,
    })
}

/// `sum_n delta^n v_n` snapshot by snapshot.
pub fn combine(components: &[TimeSeries], delta: f64) -> Result<TimeSeries> {
    let base = &components[0];
    let mut snapshots = Vec::with_capacity(base.snapshots.len());
    for k in 0..base.snapshots.len() {
        let mut values = base.snapshots[k].values.clone();
        let mut pow = 1.0;
        for c in &components[1..] {
            pow *= delta;
            for (a, b) in values.iter_mut().zip(&c.snapshots[k].values) {
                *a += pow * b;
            }
        }
        snapshots.push(GridFunction::new(base.snapshots[k].grid, values)?);
    }
    Ok(TimeSeries {
        times: base.times.clone(),
        snapshots,
    })
}

/// Radius of the region where decay is measured.
pub const DECAY_RADIUS: f64 = 3.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecayFit {
    pub rate: f64,
    pub r_squared: f64,
}

/// Least-squares slope of `log sup_{|x|<=3} |u(t,x) - <phi>|` over
/// snapshots with `t` in `window`, reported as a positive rate.
pub fn decay_rate(series: &TimeSeries, average: f64, window: (f64, f64)) -> Result<DecayFit> {
    let mut ts = Vec::new();
    let mut logs = Vec::new();
    for (t, f) in series.times.iter().zip(&series.snapshots) {
        if *t < window.0 - 1e-12 || *t > window.1 + 1e-12 {
            continue;
        }
        let r = f
            .grid
            .indices_within(DECAY_RADIUS)
            .map(|i| (f.values[i] - average).abs())
            .fold(0.0, f64::max);
        if r < 1e-12 {
            return Err(Error::DegenerateFit(format!(
                "residual {r:e} at t = {t} is below 1e-12"
            )));
        }
        ts.push(*t);
        logs.push(r.ln());
    }
    let fit = fit_line(&ts, &logs).ok_or_else(|| {
        Error::DegenerateFit(format!("{} snapshots inside the window", ts.len()))
    })?;
    Ok(DecayFit {
        rate: -fit.slope,
        r_squared: fit.r_squared,
    })
}
