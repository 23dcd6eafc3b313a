//! Gibbs density `rho = e^{-2V}/Z`, the Poisson equation `L mu = g`, and the
//! corrections `mu_n` of the invariant measure of the implicit schemes.

use num_traits::{Signed, Zero};

use crate::error::{Error, Result};
use crate::grid::{Grid, GridFunction};
use crate::operators::{Derivation, DiffOp};
use crate::potential::{quadratic_gibbs_moments, Polynomial1D, Potential};
use crate::quadrature::{cell_weights, GaussLegendre};
use crate::symbolic::{horner, int, rational_from_f64, rational_to_f64, Expr, Rational};
use crate::Scheme;

/// Relative size of `<g>` (against `max |g|` on the grid) above which the
/// Poisson equation is declared unsolvable.
pub const SOLVABILITY_TOL: f64 = 1e-6;

/// Gibbs density on the grid, normalized by the trapezoid rule.
pub fn invariant_density(v: &Potential, grid: Grid) -> Result<GridFunction> {
    let p = v.require_symbolic()?;
    let vmin = min_value(p, &grid);
    let mut rho = GridFunction::from_fn(grid, |x| (-2.0 * (p.value(x) - vmin)).exp());
    let z = rho.integral();
    rho.values.iter_mut().for_each(|r| *r /= z);
    Ok(rho)
}

/// `Z = int e^{-2V}` over the grid.
pub fn partition_function(v: &Potential, grid: Grid) -> Result<f64> {
    let p = v.require_symbolic()?;
    let vmin = min_value(p, &grid);
    let w = GridFunction::from_fn(grid, |x| (-2.0 * (p.value(x) - vmin)).exp());
    Ok(w.integral() * (-2.0 * vmin).exp())
}

fn min_value(p: &Polynomial1D, grid: &Grid) -> f64 {
    grid.nodes().iter().map(|&x| p.value(x)).fold(f64::INFINITY, f64::min)
}

/// `<phi> = int phi rho`.
pub fn mean(phi: &GridFunction, rho: &GridFunction) -> f64 {
    phi.inner(rho)
}

/// `<phi>` for a polynomial observable.
pub fn mean_expr(phi: &Expr, rho: &GridFunction) -> f64 {
    mean(&GridFunction::from_expr(rho.grid, phi), rho)
}

/// Grid values of a function and of its first derivatives,
/// `derivs[k][i] = f^{(k)}(x_i)`, optionally tagged with its polynomial.
#[derive(Debug, Clone, PartialEq)]
pub struct Jet {
    pub grid: Grid,
    pub derivs: Vec<Vec<f64>>,
    pub expr: Option<Expr>,
}

impl Jet {
    pub fn from_expr(grid: Grid, e: &Expr, order: usize) -> Self {
        let mut derivs = Vec::with_capacity(order + 1);
        let mut d = e.clone();
        for k in 0..=order {
            if k > 0 {
                d = d.dx_n(1);
            }
            derivs.push(GridFunction::from_expr(grid, &d).values);
        }
        Self {
            grid,
            derivs,
            expr: Some(e.clone()),
        }
    }

    /// Values only.
    pub fn from_values(f: &GridFunction) -> Self {
        Self {
            grid: f.grid,
            derivs: vec![f.values.clone()],
            expr: f.expr.clone(),
        }
    }

    pub fn order(&self) -> usize {
        if self.expr.is_some() {
            usize::MAX
        } else {
            self.derivs.len() - 1
        }
    }

    pub fn values(&self) -> GridFunction {
        GridFunction {
            grid: self.grid,
            values: self.derivs[0].clone(),
            expr: self.expr.clone(),
        }
    }

    /// Value at any `x`: exact for tagged jets, otherwise six-point Lagrange,
    /// which extrapolates past the ends unless enough derivatives are known
    /// for a Taylor expansion there.
    pub fn eval(&self, x: f64) -> f64 {
        if let Some(e) = &self.expr {
            return e.evaluate(x, 0.0);
        }
        let g = &self.grid;
        if (x < g.lo || x > g.hi) && self.derivs.len() >= 6 {
            let (i, t) = if x < g.lo { (0, x - g.lo) } else { (g.n - 1, x - g.hi) };
            let mut acc = 0.0;
            let mut term = 1.0;
            for (k, d) in self.derivs.iter().enumerate() {
                if k > 0 {
                    term *= t / k as f64;
                }
                acc += d[i] * term;
            }
            return acc;
        }
        lagrange6(&self.derivs[0], g, x)
    }
}

fn lagrange6(values: &[f64], g: &Grid, x: f64) -> f64 {
    let h = g.spacing();
    let n = g.n;
    if n < 6 {
        let i = (((x - g.lo) / h) as usize).min(n - 2);
        let t = (x - g.node(i)) / h;
        return values[i] * (1.0 - t) + values[i + 1] * t;
    }
    let i = ((x - g.lo) / h).floor() as i64;
    let start = (i - 2).clamp(0, n as i64 - 6) as usize;
    let t = (x - g.node(start)) / h;
    let mut acc = 0.0;
    for k in 0..6 {
        let mut l = 1.0;
        for m in 0..6 {
            if m != k {
                l *= (t - m as f64) / (k as f64 - m as f64);
            }
        }
        acc += l * values[start + k];
    }
    acc
}

/// `B f` with `order` derivatives. Exact for tagged jets; otherwise uses
/// `(B f)^{(k)} = sum_j sum_i C(k,i) b_j^{(i)} f^{(j+k-i)}` pointwise.
pub fn apply_jet(op: &DiffOp, f: &Jet, order: usize) -> Result<Jet> {
    if let Some(e) = &f.expr {
        return Ok(Jet::from_expr(f.grid, &op.apply(e), order));
    }
    let top = op.order().unwrap_or(0);
    if f.order() < top + order {
        return Err(Error::InvalidArgument(format!(
            "operator of order {top} needs {} derivatives, jet has {}",
            top + order,
            f.order()
        )));
    }
    let nodes = f.grid.nodes();
    // bvals[j][i] = b_j^{(i)} on the grid
    let bvals: Vec<Vec<Vec<f64>>> = op
        .coeffs()
        .iter()
        .map(|b| {
            let mut d = b.clone();
            (0..=order)
                .map(|i| {
                    if i > 0 {
                        d = d.dx_n(1);
                    }
                    let c = d.to_float_coeffs();
                    nodes.iter().map(|&x| horner(&c, x)).collect()
                })
                .collect()
        })
        .collect();
    let mut derivs = vec![vec![0.0; f.grid.n]; order + 1];
    for (k, out) in derivs.iter_mut().enumerate() {
        let mut binom = 1.0;
        for i in 0..=k {
            for (j, bj) in bvals.iter().enumerate() {
                if op.coeffs()[j].is_zero() {
                    continue;
                }
                let fd = &f.derivs[j + k - i];
                for (p, o) in out.iter_mut().enumerate() {
                    *o += binom * bj[i][p] * fd[p];
                }
            }
            binom = binom * (k - i) as f64 / (i + 1) as f64;
        }
    }
    Ok(Jet {
        grid: f.grid,
        derivs,
        expr: None,
    })
}

/// Right-hand side of a Poisson problem.
#[derive(Debug, Clone, Copy)]
pub enum Source<'a> {
    Expr(&'a Expr),
    Grid(&'a GridFunction),
    Jet(&'a Jet),
}

/// Outcome of [`poisson_solve`].
#[derive(Debug, Clone)]
pub struct PoissonSolution {
    /// `mu` with as many derivatives as requested.
    pub jet: Jet,
    /// `<g>` removed before solving.
    pub subtracted_mean: f64,
    /// True when the polynomial path produced an exact solution.
    pub exact: bool,
}

impl PoissonSolution {
    pub fn mu(&self) -> GridFunction {
        self.jet.values()
    }
}

/// Solves `L mu = g - <g>` with `<mu> = 0` on `grid`, returning `mu` and its
/// first `order` derivatives.
pub fn poisson_solve(v: &Potential, g: Source<'_>, grid: Grid, order: usize) -> Result<PoissonSolution> {
    let p = v.require_symbolic()?;
    let rho = invariant_density(v, grid)?;
    let jet = match g {
        Source::Expr(e) => Jet::from_expr(grid, e, order.saturating_sub(2)),
        Source::Grid(f) => Jet::from_values(f),
        Source::Jet(j) => j.clone(),
    };
    if jet.grid != grid {
        return Err(Error::InvalidArgument("source and solver grids differ".into()));
    }
    let mean_g = mean(&jet.values(), &rho);
    let scale = jet.derivs[0].iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if mean_g.abs() > SOLVABILITY_TOL * scale {
        return Err(Error::SolvabilityViolated {
            mean: mean_g,
            tolerance: SOLVABILITY_TOL * scale,
        });
    }
    if let (Some(e), true) = (&jet.expr, p.is_quadratic() && p.degree() == 2) {
        let (mu, removed) = solve_quadratic_exact(p, e)?;
        return Ok(PoissonSolution {
            jet: Jet::from_expr(grid, &mu, order),
            subtracted_mean: rational_to_f64(&removed),
            exact: true,
        });
    }
    let centred = centre(&jet, mean_g)?;
    if order >= 2 && centred.order() < order - 2 {
        return Err(Error::InvalidArgument(format!(
            "{order} derivatives of mu need {} derivatives of the source",
            order - 2
        )));
    }
    let jet = solve_numeric(p, &centred, &rho, order);
    Ok(PoissonSolution {
        jet,
        subtracted_mean: mean_g,
        exact: false,
    })
}

fn centre(jet: &Jet, mean_g: f64) -> Result<Jet> {
    if let Some(e) = &jet.expr {
        let shifted = e - &Expr::constant(rational_from_f64(mean_g)?);
        let order = jet.derivs.len() - 1;
        return Ok(Jet::from_expr(jet.grid, &shifted, order));
    }
    let mut out = jet.clone();
    out.derivs[0].iter_mut().for_each(|v| *v -= mean_g);
    Ok(out)
}

/// Undetermined coefficients for `V = a x^2 + b x + c`: `L` maps `x^m` to
/// `-2 a m x^m - b m x^{m-1} + m(m-1)/2 x^{m-2}`.
fn solve_quadratic_exact(p: &Polynomial1D, g: &Expr) -> Result<(Expr, Rational)> {
    let v = p.expr().x_coeffs();
    let (b, a) = (v[1].clone(), v[2].clone());
    let moments = quadratic_gibbs_moments(p.expr(), g.degree_x().unwrap_or(0) as usize + 1)
        .ok_or_else(|| Error::InvalidPotential("quadratic path needs a positive leading coefficient".into()))?;
    let mut gc = g.x_coeffs();
    let mean: Rational = gc.iter().zip(&moments).map(|(c, m)| c * m).sum();
    if gc.is_empty() {
        gc.push(Rational::zero());
    }
    gc[0] -= &mean;
    let d = gc.len() - 1;
    let mut mu = vec![Rational::zero(); d + 3];
    for m in (1..=d).rev() {
        let mut rhs = gc[m].clone();
        rhs += &mu[m + 1] * &b * int(m as i64 + 1);
        rhs -= &mu[m + 2] * int(((m + 2) * (m + 1) / 2) as i64);
        mu[m] = rhs / (&a * int(-2 * m as i64));
    }
    let constant = &mu[2] - &mu[1] * &b;
    let residual = &gc[0] - &constant;
    if !residual.is_zero() {
        return Err(Error::SolvabilityViolated {
            mean: rational_to_f64(&residual),
            tolerance: 0.0,
        });
    }
    mu.truncate(d + 1);
    let shift: Rational = mu.iter().zip(&moments).skip(1).map(|(c, m)| c * m).sum();
    mu[0] = -shift;
    Ok((Expr::from_coeffs(&mu), mean))
}

const TAIL_EXPONENT: f64 = 80.0;

/// `int_0^inf e^{-2(V(x0 + s t) - V(x0))} g(x0 + s t) dt` for the outward
/// direction `s = +-1`.
fn tail_integral(p: &Polynomial1D, g: &Jet, x0: f64, s: f64, gl: &GaussLegendre) -> f64 {
    let v0 = p.value(x0);
    let mut t = 0.0;
    let mut acc = 0.0;
    for _ in 0..100_000 {
        let rate = 2.0 * p.dv(x0 + s * t).abs().max(p.dv(x0 + s * (t + 1.0)).abs()).max(1.0);
        let len = (1.0 / rate).min(1.0);
        acc += gl.integrate(t, t + len, |u| {
            let y = x0 + s * u;
            (-2.0 * (p.value(y) - v0)).exp() * g.eval(y)
        });
        t += len;
        if 2.0 * (p.value(x0 + s * t) - v0) > TAIL_EXPONENT {
            break;
        }
    }
    acc
}

/// `int_a^b e^{2(V(x_ref) - V(s))} g(s) ds` split so that the exponent
/// varies by at most one per piece.
fn weighted_cell(p: &Polynomial1D, g: &Jet, a: f64, b: f64, x_ref: f64, gl: &GaussLegendre) -> f64 {
    let vref = p.value(x_ref);
    let rate = 2.0 * p.dv(a).abs().max(p.dv(b).abs()).max(p.dv(0.5 * (a + b)).abs());
    let pieces = ((rate * (b - a)).ceil() as usize).max(1);
    let h = (b - a) / pieces as f64;
    (0..pieces)
        .map(|k| {
            let lo = a + k as f64 * h;
            gl.integrate(lo, lo + h, |s| (2.0 * (vref - p.value(s))).exp() * g.eval(s))
        })
        .sum()
}

/// `mu' = 2 e^{2V(x)} int_{-inf}^x e^{-2V} g`, evaluated from the left
/// below the median of `rho` and as `-2 e^{2V(x)} int_x^inf e^{-2V} g` above,
/// then integrated from the median node and centred.
fn solve_numeric(p: &Polynomial1D, g: &Jet, rho: &GridFunction, order: usize) -> Jet {
    let grid = rho.grid;
    let n = grid.n;
    let nodes = grid.nodes();
    let gl = GaussLegendre::new(8);
    let vals: Vec<f64> = nodes.iter().map(|&x| p.value(x)).collect();

    let mut cumulative = 0.0;
    let mut split = n - 1;
    for i in 0..n {
        cumulative += rho.values[i] * grid.weight(i);
        if cumulative >= 0.5 {
            split = i;
            break;
        }
    }

    let mut j = vec![0.0; n];
    j[0] = tail_integral(p, g, nodes[0], -1.0, &gl);
    for i in 0..split {
        let cell = weighted_cell(p, g, nodes[i], nodes[i + 1], nodes[i + 1], &gl);
        j[i + 1] = (2.0 * (vals[i + 1] - vals[i])).exp() * j[i] + cell;
    }
    j[n - 1] = -tail_integral(p, g, nodes[n - 1], 1.0, &gl);
    for i in (split + 1..n - 1).rev() {
        let cell = weighted_cell(p, g, nodes[i], nodes[i + 1], nodes[i], &gl);
        j[i] = (2.0 * (vals[i] - vals[i + 1])).exp() * j[i + 1] - cell;
    }
    let dmu: Vec<f64> = j.iter().map(|v| 2.0 * v).collect();

    let h = grid.spacing();
    let weights: Vec<Vec<f64>> = (-5..=0).map(|off| cell_weights(6, off)).collect();
    let cell_integral = |i: usize| -> f64 {
        let start = (i as i64 - 2).clamp(0, n as i64 - 6) as usize;
        let w = &weights[(start as i64 - i as i64 + 5) as usize];
        h * w.iter().enumerate().map(|(k, c)| c * dmu[start + k]).sum::<f64>()
    };
    let mut mu = vec![0.0; n];
    for i in split..n - 1 {
        mu[i + 1] = mu[i] + cell_integral(i);
    }
    for i in (0..split).rev() {
        mu[i] = mu[i + 1] - cell_integral(i);
    }
    let shift = grid.integrate(&mu.iter().zip(&rho.values).map(|(a, b)| a * b).collect::<Vec<_>>());
    mu.iter_mut().for_each(|m| *m -= shift);

    let mut derivs = vec![mu, dmu];
    let vd: Vec<Vec<f64>> = (1..=order.max(1))
        .map(|k| nodes.iter().map(|&x| p.eval(k, x)).collect())
        .collect();
    for k in 0..order.saturating_sub(1) {
        let mut next = vec![0.0; n];
        let mut binom = 1.0;
        for jj in 0..=k {
            let v = &vd[jj];
            let m = &derivs[k - jj + 1];
            for i in 0..n {
                next[i] += 2.0 * binom * v[i] * m[i];
            }
            binom = binom * (k - jj) as f64 / (jj + 1) as f64;
        }
        for (o, gk) in next.iter_mut().zip(&g.derivs[k]) {
            *o += 2.0 * gk;
        }
        derivs.push(next);
    }
    derivs.truncate(order + 1);
    Jet {
        grid,
        derivs,
        expr: None,
    }
}

/// `mu_0 = 1`, `mu_1`, ..., `mu_N` for one scheme and potential, with the
/// sources `G_n = -sum_{l=1}^n L_l^* mu_{n-l}`.
#[derive(Debug, Clone)]
pub struct MeasureCorrection {
    pub scheme: Scheme,
    pub grid: Grid,
    pub rho: GridFunction,
    mu: Vec<Jet>,
    source_means: Vec<f64>,
    source_scales: Vec<f64>,
    potential: Potential,
}

impl MeasureCorrection {
    pub fn new(v: &Potential, scheme: Scheme, max_order: usize, grid: Grid) -> Result<Self> {
        let mut derivation = Derivation::new(v, scheme)?;
        let rho = invariant_density(v, grid)?;
        let adjoints: Vec<DiffOp> = (1..=max_order)
            .map(|l| derivation.modified_generator(l).rho_adjoint(v))
            .collect::<Result<_>>()?;
        // derivatives of mu_k needed downstream
        let mut need = vec![2usize; max_order + 1];
        for k in (0..max_order).rev() {
            need[k] = (k + 1..=max_order)
                .map(|m| 2 * (m - k) + 2 + need[m].saturating_sub(2))
                .max()
                .unwrap_or(2);
        }
        let mut mu = vec![Jet::from_expr(grid, &Expr::one(), need[0])];
        let mut source_means = vec![0.0];
        let mut source_scales = vec![0.0];
        for n in 1..=max_order {
            let src_order = need[n] - 2;
            let mut g: Option<Jet> = None;
            for l in 1..=n {
                let term = apply_jet(&adjoints[l - 1], &mu[n - l], src_order)?;
                g = Some(match g {
                    None => term,
                    Some(acc) => add_jets(&acc, &term),
                });
            }
            let g = negate(&g.expect("n >= 1"));
            let abs: Vec<f64> = g.derivs[0].iter().map(|v| v.abs()).collect();
            source_scales.push(mean(&GridFunction::new(grid, abs)?, &rho));
            let sol = poisson_solve(v, Source::Jet(&g), grid, need[n])?;
            source_means.push(sol.subtracted_mean);
            mu.push(sol.jet);
        }
        Ok(Self {
            scheme,
            grid,
            rho,
            mu,
            source_means,
            source_scales,
            potential: v.clone(),
        })
    }

    pub fn max_order(&self) -> usize {
        self.mu.len() - 1
    }

    /// `mu_n` on the grid (tagged when exact).
    pub fn mu(&self, n: usize) -> GridFunction {
        self.mu[n].values()
    }

    pub fn jet(&self, n: usize) -> &Jet {
        &self.mu[n]
    }

    /// `<G_n>` before centring.
    pub fn source_mean(&self, n: usize) -> f64 {
        self.source_means[n]
    }

    /// `int |G_n| rho`.
    pub fn source_scale(&self, n: usize) -> f64 {
        self.source_scales[n]
    }

    /// `mu^{(N)} = 1 + sum_{n<=N} delta^n mu_n`.
    pub fn density_factor(&self, order: usize, delta: f64) -> Result<GridFunction> {
        self.potential.check_delta(delta)?;
        if order > self.max_order() {
            return Err(Error::InvalidArgument(format!(
                "order {order} exceeds the computed {}",
                self.max_order()
            )));
        }
        let mut values = vec![1.0; self.grid.n];
        let mut pow = 1.0;
        for n in 1..=order {
            pow *= delta;
            for (v, m) in values.iter_mut().zip(&self.mu[n].derivs[0]) {
                *v += pow * m;
            }
        }
        GridFunction::new(self.grid, values)
    }

    /// `int phi mu^{(N)} rho`.
    pub fn corrected_average(&self, phi: &Expr, order: usize, delta: f64) -> Result<f64> {
        let factor = self.density_factor(order, delta)?;
        let weighted = GridFunction::new(
            self.grid,
            factor.values.iter().zip(&self.rho.values).map(|(a, b)| a * b).collect(),
        )?;
        Ok(mean_expr(phi, &weighted))
    }

    /// CSV of `mu_n` with its metadata.
    pub fn to_csv(&self, n: usize, extra: &[String]) -> String {
        let mut header = vec![format!(
            "mu_{n} scheme = {}, grid = [{}, {}], nodes = {}",
            self.scheme, self.grid.lo, self.grid.hi, self.grid.n
        )];
        header.extend_from_slice(extra);
        self.mu(n).to_csv(&header)
    }
}

fn add_jets(a: &Jet, b: &Jet) -> Jet {
    if let (Some(x), Some(y)) = (&a.expr, &b.expr) {
        return Jet::from_expr(a.grid, &(x + y), a.derivs.len() - 1);
    }
    Jet {
        grid: a.grid,
        derivs: a
            .derivs
            .iter()
            .zip(&b.derivs)
            .map(|(u, v)| u.iter().zip(v).map(|(p, q)| p + q).collect())
            .collect(),
        expr: None,
    }
}

fn negate(a: &Jet) -> Jet {
    if let Some(x) = &a.expr {
        return Jet::from_expr(a.grid, &-x.clone(), a.derivs.len() - 1);
    }
    Jet {
        grid: a.grid,
        derivs: a.derivs.iter().map(|u| u.iter().map(|p| -p).collect()).collect(),
        expr: None,
    }
}

/// `mu_n` on the grid.
pub fn correction(v: &Potential, scheme: Scheme, n: usize, grid: Grid) -> Result<GridFunction> {
    Ok(MeasureCorrection::new(v, scheme, n, grid)?.mu(n))
}

/// `int phi (1 + sum_{n<=N} delta^n mu_n) rho`.
pub fn corrected_average(phi: &Expr, v: &Potential, scheme: Scheme, order: usize, delta: f64, grid: Grid) -> Result<f64> {
    v.check_delta(delta)?;
    MeasureCorrection::new(v, scheme, order, grid)?.corrected_average(phi, order, delta)
}
