//! Potentials `V` and the constants of the dissipativity / semi-convexity
//! assumptions that gate the implicit schemes.

use std::fmt;
use std::sync::Arc;

use num_traits::{Signed, Zero};

use crate::error::{Error, Result};
use crate::symbolic::{horner, int, ratio, Expr, Rational};

/// Whether a constant was supplied analytically or estimated on a grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    Declared,
    Estimated,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Constant {
    pub value: f64,
    pub provenance: Provenance,
}

impl Constant {
    pub fn declared(value: f64) -> Self {
        Self {
            value,
            provenance: Provenance::Declared,
        }
    }

    pub fn estimated(value: f64) -> Self {
        Self {
            value,
            provenance: Provenance::Estimated,
        }
    }
}

/// Named fixtures.
#[derive(Debug, Clone, PartialEq)]
pub enum Builtin {
    /// `V = x^2 / 2`.
    Ou,
    /// `V = x^4 / 4 - x^2 / 2`.
    DoubleWell,
    /// `V = sum coeffs[k] x^k`.
    Quartic(Vec<Rational>),
}

/// Polynomial potential in one variable with all its derivatives.
#[derive(Debug, Clone)]
pub struct Polynomial1D {
    derivs: Vec<Expr>,
    float_derivs: Vec<Vec<f64>>,
}

impl Polynomial1D {
    fn new(v: Expr) -> Result<Self> {
        if !v.is_eta_free() {
            return Err(Error::InvalidPotential(
                "potential must not depend on eta".into(),
            ));
        }
        let mut derivs = vec![v];
        loop {
            let next = derivs.last().unwrap().dx_n(1);
            if next.is_zero() {
                break;
            }
            derivs.push(next);
        }
        let float_derivs = derivs.iter().map(Expr::to_float_coeffs).collect();
        Ok(Self {
            derivs,
            float_derivs,
        })
    }

    pub fn expr(&self) -> &Expr {
        &self.derivs[0]
    }

    /// `V^{(k)}` as an exact expression (zero past the degree).
    pub fn derivative(&self, k: usize) -> Expr {
        self.derivs.get(k).cloned().unwrap_or_else(Expr::zero)
    }

    /// `V^{(k)}(x)`.
    pub fn eval(&self, k: usize, x: f64) -> f64 {
        self.float_derivs.get(k).map_or(0.0, |c| horner(c, x))
    }

    pub fn value(&self, x: f64) -> f64 {
        self.eval(0, x)
    }

    pub fn dv(&self, x: f64) -> f64 {
        self.eval(1, x)
    }

    pub fn d2v(&self, x: f64) -> f64 {
        self.eval(2, x)
    }

    pub fn degree(&self) -> usize {
        self.derivs[0].degree_x().unwrap_or(0) as usize
    }

    /// True for potentials of degree at most two.
    pub fn is_quadratic(&self) -> bool {
        self.degree() <= 2
    }
}

type ScalarFn = dyn Fn(&[f64]) -> f64 + Send + Sync;
type VectorFn = dyn Fn(&[f64], &mut [f64]) + Send + Sync;

/// Potential on `R^d` given by callables; `hessian` writes a row-major
/// `d x d` matrix.
#[derive(Clone)]
pub struct NumericPotential {
    pub dim: usize,
    pub value: Arc<ScalarFn>,
    pub gradient: Arc<VectorFn>,
    pub hessian: Arc<VectorFn>,
}

impl fmt::Debug for NumericPotential {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("NumericPotential")
            .field("dim", &self.dim)
            .finish_non_exhaustive()
    }
}

#[derive(Debug, Clone)]
pub enum PotentialForm {
    Symbolic1D(Polynomial1D),
    NumericND(NumericPotential),
}

/// Drift data of `dX = -grad V(X) dt + dW`.
#[derive(Debug, Clone)]
pub struct Potential {
    pub form: PotentialForm,
    /// Semi-convexity: `V'' >= -alpha`.
    pub alpha: Constant,
    /// Dissipativity: `x V'(x) >= beta x^2 - kappa`.
    pub beta: Constant,
    pub kappa: Constant,
}

/// Outcome of [`Potential::check_assumptions`].
#[derive(Debug, Clone, PartialEq)]
pub struct Diagnostics {
    pub radius: f64,
    pub grid_points: usize,
    pub alpha: f64,
    pub beta: f64,
    pub kappa: f64,
    /// `1 / alpha`, infinite in the convex case.
    pub delta0: f64,
    /// `max_k (1 + R^{2k}) e^{-2 V(+-R)}` for `k <= 4`.
    pub tail_bound: f64,
    pub integrable: bool,
}

/// Ceiling of the dissipativity scan. Any `beta > 0` serves the moment
/// bounds, and for super-quadratic potentials every `beta` is feasible with
/// a large enough `kappa`, so the scan is capped.
pub const BETA_CAP: f64 = 1.0;

pub const DIAGNOSTIC_RADIUS: f64 = 6.0;
pub const DIAGNOSTIC_POINTS: usize = 4097;

impl Potential {
    pub fn ou() -> Self {
        let v = Expr::monomial(ratio(1, 2), 2, 0);
        Self::with_constants(v, 0.0, 1.0, 0.0).expect("fixture is valid")
    }

    pub fn double_well() -> Self {
        let v = Expr::from_coeffs(&[int(0), int(0), ratio(-1, 2), int(0), ratio(1, 4)]);
        Self::with_constants(v, 1.0, 1.0, 1.0).expect("fixture is valid")
    }

    /// User polynomial `sum coeffs[k] x^k` of even degree with positive
    /// leading coefficient; constants are estimated on the diagnostic grid.
    pub fn quartic(coeffs: &[Rational]) -> Result<Self> {
        let v = Expr::from_coeffs(coeffs);
        let degree = v.degree_x().unwrap_or(0);
        if degree < 2 || degree % 2 == 1 {
            return Err(Error::InvalidPotential(format!(
                "polynomial potential must have even degree >= 2 (got degree {degree})"
            )));
        }
        if !v.coeff(degree, 0).is_positive() {
            return Err(Error::InvalidPotential(
                "leading coefficient must be positive".into(),
            ));
        }
        Self::estimated(v)
    }

    pub fn builtin(b: &Builtin) -> Result<Self> {
        match b {
            Builtin::Ou => Ok(Self::ou()),
            Builtin::DoubleWell => Ok(Self::double_well()),
            Builtin::Quartic(c) => Self::quartic(c),
        }
    }

    /// Polynomial potential with analytically known constants.
    pub fn with_constants(v: Expr, alpha: f64, beta: f64, kappa: f64) -> Result<Self> {
        Ok(Self {
            form: PotentialForm::Symbolic1D(Polynomial1D::new(v)?),
            alpha: Constant::declared(alpha),
            beta: Constant::declared(beta),
            kappa: Constant::declared(kappa),
        })
    }

    /// Polynomial potential with grid-estimated constants. A potential
    /// outside the dissipative class gets `beta = kappa = 0`; use
    /// [`Potential::check_assumptions`] to get the error.
    pub fn estimated(v: Expr) -> Result<Self> {
        let poly = Polynomial1D::new(v)?;
        let nodes = diagnostic_nodes(DIAGNOSTIC_RADIUS, DIAGNOSTIC_POINTS);
        let alpha = Constant::estimated(estimate_alpha(&poly, &nodes));
        let (beta, kappa) = estimate_dissipativity(&poly, &nodes).unwrap_or((0.0, 0.0));
        Ok(Self {
            form: PotentialForm::Symbolic1D(poly),
            alpha,
            beta: Constant::estimated(beta),
            kappa: Constant::estimated(kappa),
        })
    }

    /// Potential on `R^d` given by callables.
    pub fn numeric(
        dim: usize,
        value: Arc<ScalarFn>,
        gradient: Arc<VectorFn>,
        hessian: Arc<VectorFn>,
        alpha: f64,
        beta: f64,
        kappa: f64,
    ) -> Self {
        Self {
            form: PotentialForm::NumericND(NumericPotential {
                dim,
                value,
                gradient,
                hessian,
            }),
            alpha: Constant::declared(alpha),
            beta: Constant::declared(beta),
            kappa: Constant::declared(kappa),
        }
    }

    /// `V(x) = sum_i V_1(x_i)` on `R^dim` from a one-dimensional symbolic
    /// potential.
    pub fn separable(base: &Potential, dim: usize) -> Result<Self> {
        let poly = base.symbolic().ok_or(Error::NotSymbolic)?.clone();
        let (pv, pg, ph) = (poly.clone(), poly.clone(), poly);
        Ok(Self {
            form: PotentialForm::NumericND(NumericPotential {
                dim,
                value: Arc::new(move |x| x.iter().map(|&xi| pv.value(xi)).sum()),
                gradient: Arc::new(move |x, out| {
                    for (o, &xi) in out.iter_mut().zip(x) {
                        *o = pg.dv(xi);
                    }
                }),
                hessian: Arc::new(move |x, out| {
                    let d = x.len();
                    out.iter_mut().for_each(|o| *o = 0.0);
                    for i in 0..d {
                        out[i * d + i] = ph.d2v(x[i]);
                    }
                }),
            }),
            alpha: base.alpha,
            beta: base.beta,
            kappa: Constant {
                value: base.kappa.value * dim as f64,
                provenance: base.kappa.provenance,
            },
        })
    }

    pub fn symbolic(&self) -> Option<&Polynomial1D> {
        match &self.form {
            PotentialForm::Symbolic1D(p) => Some(p),
            PotentialForm::NumericND(_) => None,
        }
    }

    pub fn require_symbolic(&self) -> Result<&Polynomial1D> {
        self.symbolic().ok_or(Error::NotSymbolic)
    }

    pub fn dimension(&self) -> usize {
        match &self.form {
            PotentialForm::Symbolic1D(_) => 1,
            PotentialForm::NumericND(n) => n.dim,
        }
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        match &self.form {
            PotentialForm::Symbolic1D(p) => p.value(x[0]),
            PotentialForm::NumericND(n) => (n.value)(x),
        }
    }

    pub fn gradient(&self, x: &[f64], out: &mut [f64]) {
        match &self.form {
            PotentialForm::Symbolic1D(p) => out[0] = p.dv(x[0]),
            PotentialForm::NumericND(n) => (n.gradient)(x, out),
        }
    }

    pub fn hessian(&self, x: &[f64], out: &mut [f64]) {
        match &self.form {
            PotentialForm::Symbolic1D(p) => out[0] = p.d2v(x[0]),
            PotentialForm::NumericND(n) => (n.hessian)(x, out),
        }
    }

    /// Largest admissible time step of the implicit schemes, `1 / alpha`
    /// (infinite for convex potentials).
    pub fn delta0(&self) -> f64 {
        if self.alpha.value <= 0.0 {
            f64::INFINITY
        } else {
            1.0 / self.alpha.value
        }
    }

    /// Errors with [`Error::DeltaOutOfRange`] unless `0 < delta < delta_0`.
    pub fn check_delta(&self, delta: f64) -> Result<()> {
        let delta0 = self.delta0();
        if !(delta > 0.0) || delta >= delta0 || !delta.is_finite() {
            return Err(Error::DeltaOutOfRange { delta, delta0 });
        }
        Ok(())
    }

    /// Estimates the constants on `[-radius, radius]` and checks that the
    /// potential belongs to the dissipative, semi-convex class.
    pub fn check_assumptions(&self, radius: f64, grid_points: usize) -> Result<Diagnostics> {
        if !(radius > 0.0) || grid_points < 3 {
            return Err(Error::InvalidArgument(
                "diagnostics need radius > 0 and at least 3 points".into(),
            ));
        }
        let poly = self.require_symbolic()?;
        let nodes = diagnostic_nodes(radius, grid_points);
        let alpha = estimate_alpha(poly, &nodes);
        let (beta, kappa) = estimate_dissipativity(poly, &nodes).ok_or_else(|| {
            Error::AssumptionViolated(
                "no beta > 0 satisfies x V'(x) >= beta x^2 - kappa at the grid edge".into(),
            )
        })?;
        let tail_bound = [-radius, radius]
            .iter()
            .flat_map(|&r| {
                let w = (-2.0 * poly.value(r)).exp();
                (0..=2).map(move |k| (1.0 + r.powi(2 * k)) * w)
            })
            .fold(0.0, f64::max);
        let outward = poly.dv(radius) > 0.0 && poly.dv(-radius) < 0.0;
        Ok(Diagnostics {
            radius,
            grid_points,
            alpha,
            beta,
            kappa,
            delta0: if alpha > 0.0 { 1.0 / alpha } else { f64::INFINITY },
            tail_bound,
            integrable: outward && tail_bound < 1e-10,
        })
    }
}

fn diagnostic_nodes(radius: f64, n: usize) -> Vec<f64> {
    let h = 2.0 * radius / (n - 1) as f64;
    (0..n)
        .map(|i| if i + 1 == n { radius } else { -radius + i as f64 * h })
        .collect()
}

/// `max(0, -min V'')` over the nodes.
fn estimate_alpha(poly: &Polynomial1D, nodes: &[f64]) -> f64 {
    let min = nodes
        .iter()
        .map(|&x| poly.d2v(x))
        .fold(f64::INFINITY, f64::min);
    (-min).max(0.0)
}

/// Largest `beta` in `(0, BETA_CAP]` for which `x V'(x) - beta x^2` does not
/// decrease outward at both grid edges, with the matching smallest `kappa`.
fn estimate_dissipativity(poly: &Polynomial1D, nodes: &[f64]) -> Option<(f64, f64)> {
    let n = nodes.len();
    let feasible = |beta: f64| {
        let g = |x: f64| x * poly.dv(x) - beta * x * x;
        let right = g(nodes[n - 1]) - g(nodes[n - 2]) >= -1e-12;
        let left = g(nodes[0]) - g(nodes[1]) >= -1e-12;
        right && left
    };
    const STEPS: usize = 1000;
    let beta = (1..=STEPS)
        .rev()
        .map(|k| BETA_CAP * k as f64 / STEPS as f64)
        .find(|&b| feasible(b))?;
    let kappa = nodes
        .iter()
        .map(|&x| beta * x * x - x * poly.dv(x))
        .fold(0.0, f64::max);
    Some((beta, kappa))
}

/// Exact `V'` of a symbolic potential.
pub fn drift_expr(v: &Potential) -> Result<Expr> {
    Ok(v.require_symbolic()?.derivative(1))
}

/// Exact Gaussian moments `E[Y^k]`, `k = 0..=max`, of the Gibbs density
/// `e^{-2V}/Z` for a quadratic `V = a x^2 + b x + c` with `a > 0`.
pub fn quadratic_gibbs_moments(v: &Expr, max: usize) -> Option<Vec<Rational>> {
    let c = v.x_coeffs();
    if c.len() != 3 || !c[2].is_positive() {
        return None;
    }
    // e^{-2V} is Gaussian with mean -b/(2a) and variance 1/(4a)
    let mean = -&c[1] / (&c[2] * int(2));
    let var = Rational::from_integer(1.into()) / (&c[2] * int(4));
    let mut out = Vec::with_capacity(max + 1);
    for k in 0..=max {
        let mut acc = Rational::zero();
        let mut binom = num_bigint::BigInt::from(1);
        for j in 0..=k {
            if j % 2 == 0 {
                acc += num_traits::pow(mean.clone(), k - j)
                    * num_traits::pow(var.clone(), j / 2)
                    * crate::symbolic::gaussian_moment(j as u32)
                    * &binom;
            }
            binom = binom * (k - j) / (j + 1);
        }
        out.push(acc);
    }
    Some(out)
}
