//! One-dimensional differential operators with polynomial coefficients, and
//! the derivation of the weak expansion operators `A_n` and the modified
//! generators `L_n` of the implicit schemes.

use std::fmt;

use num_bigint::BigInt;
use num_traits::{One, Signed, Zero};

use crate::error::{Error, Result};
use crate::grid::{Grid, GridFunction};
use crate::potential::Potential;
use crate::stencil;
use crate::symbolic::{bernoulli, factorial, format_rational, gaussian_moment, int, rational_from_f64, Expr, Rational};
use crate::Scheme;

/// `sum_j coeffs[j] * D^j` with `D = d/dx`.
///
/// The highest stored coefficient is nonzero, so equality of operators is
/// equality of coefficient lists.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DiffOp {
    coeffs: Vec<Expr>,
}

impl DiffOp {
    pub fn new(mut coeffs: Vec<Expr>) -> Self {
        while coeffs.last().is_some_and(Expr::is_zero) {
            coeffs.pop();
        }
        Self { coeffs }
    }

    pub fn zero() -> Self {
        Self::default()
    }

    pub fn identity() -> Self {
        Self::multiplication(Expr::one())
    }

    /// `D`.
    pub fn derivative() -> Self {
        Self::new(vec![Expr::zero(), Expr::one()])
    }

    /// Multiplication by `e`.
    pub fn multiplication(e: Expr) -> Self {
        Self::new(vec![e])
    }

    pub fn coeffs(&self) -> &[Expr] {
        &self.coeffs
    }

    pub fn coeff(&self, j: usize) -> Expr {
        self.coeffs.get(j).cloned().unwrap_or_else(Expr::zero)
    }

    /// Highest derivative present, `None` for the zero operator.
    pub fn order(&self) -> Option<usize> {
        self.coeffs.len().checked_sub(1)
    }

    pub fn is_zero(&self) -> bool {
        self.coeffs.is_empty()
    }

    pub fn apply(&self, f: &Expr) -> Expr {
        let mut out = Expr::zero();
        let mut deriv = f.clone();
        for (j, c) in self.coeffs.iter().enumerate() {
            if j > 0 {
                deriv = deriv.dx_n(1);
            }
            if deriv.is_zero() {
                break;
            }
            if !c.is_zero() {
                out += &(c * &deriv);
            }
        }
        out
    }

    /// `self ∘ other`, expanded with the Leibniz rule.
    pub fn compose(&self, other: &DiffOp) -> DiffOp {
        if self.is_zero() || other.is_zero() {
            return DiffOp::zero();
        }
        let max_j = self.coeffs.len() - 1;
        // derivs[k][i] = i-th derivative of other.coeffs[k]
        let derivs: Vec<Vec<Expr>> = other
            .coeffs
            .iter()
            .map(|c| {
                let mut v = Vec::with_capacity(max_j + 1);
                let mut d = c.clone();
                for i in 0..=max_j {
                    if i > 0 {
                        d = d.dx_n(1);
                    }
                    v.push(d.clone());
                }
                v
            })
            .collect();
        let mut out = vec![Expr::zero(); max_j + other.coeffs.len()];
        for (j, a) in self.coeffs.iter().enumerate() {
            if a.is_zero() {
                continue;
            }
            let mut binom = BigInt::one();
            for i in 0..=j {
                let weight = Rational::from_integer(binom.clone());
                for (k, dk) in derivs.iter().enumerate() {
                    let b = &dk[i];
                    if !b.is_zero() {
                        out[j - i + k] += &(a * b).scale(&weight);
                    }
                }
                binom = binom * (j - i) / (i + 1);
            }
        }
        DiffOp::new(out)
    }

    pub fn add(&self, other: &DiffOp) -> DiffOp {
        let n = self.coeffs.len().max(other.coeffs.len());
        DiffOp::new((0..n).map(|j| &self.coeff(j) + &other.coeff(j)).collect())
    }

    pub fn sub(&self, other: &DiffOp) -> DiffOp {
        self.add(&other.scale(&-Rational::one()))
    }

    pub fn scale(&self, s: &Rational) -> DiffOp {
        DiffOp::new(self.coeffs.iter().map(|c| c.scale(s)).collect())
    }

    /// Adjoint in `L^2(rho)` with `rho ∝ e^{-2V}`:
    /// `B* g = sum_j (-1)^j D_rho^j (b_j g)` where `D_rho h = h' - 2 V' h`.
    pub fn rho_adjoint(&self, v: &Potential) -> Result<DiffOp> {
        let drift = v.require_symbolic()?.derivative(1);
        let d_rho = DiffOp::new(vec![drift.scale(&int(-2)), Expr::one()]);
        let mut power = DiffOp::identity();
        let mut out = DiffOp::zero();
        for (j, b) in self.coeffs.iter().enumerate() {
            if j > 0 {
                power = d_rho.compose(&power);
            }
            if b.is_zero() {
                continue;
            }
            let term = power.compose(&DiffOp::multiplication(b.clone()));
            out = if j % 2 == 0 { out.add(&term) } else { out.sub(&term) };
        }
        Ok(out)
    }

    /// Coefficients sampled on the grid, `[j][i] = coeffs[j](x_i)`.
    pub fn coefficient_values(&self, grid: &Grid) -> Vec<Vec<f64>> {
        let nodes = grid.nodes();
        self.coeffs
            .iter()
            .map(|c| {
                let fc = c.to_float_coeffs();
                nodes.iter().map(|&x| crate::symbolic::horner(&fc, x)).collect()
            })
            .collect()
    }

    /// Applies the operator to grid values with centered finite differences
    /// of the given accuracy. Exact when `f` carries its polynomial.
    pub fn apply_on_grid(&self, f: &GridFunction, accuracy: usize) -> GridFunction {
        if let Some(e) = &f.expr {
            return GridFunction::from_expr(f.grid, &self.apply(e));
        }
        let h = f.grid.spacing();
        let coeffs = self.coefficient_values(&f.grid);
        let mut out = vec![0.0; f.grid.n];
        for (j, c) in coeffs.iter().enumerate() {
            if self.coeffs[j].is_zero() {
                continue;
            }
            let d = stencil::derivative(&f.values, h, j, accuracy);
            for i in 0..out.len() {
                out[i] += c[i] * d[i];
            }
        }
        GridFunction {
            grid: f.grid,
            values: out,
            expr: None,
        }
    }
}

impl fmt::Display for DiffOp {
    /// `c_J*D^J + ... + c_0`, for example `1/2*D^2 + 1/2*x*D^1`.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_zero() {
            return f.write_str("0");
        }
        let mut first = true;
        for (j, c) in self.coeffs.iter().enumerate().rev() {
            if c.is_zero() {
                continue;
            }
            let (negative, body) = if c.num_terms() == 1 {
                let (a, b, r) = c.terms().next().expect("one term");
                let mono = Expr::monomial(r.abs(), a, b);
                let body = if j == 0 {
                    mono.to_string()
                } else if a == 0 && b == 0 && r.abs().is_one() {
                    format!("D^{j}")
                } else {
                    format!("{mono}*D^{j}")
                };
                (r.is_negative(), body)
            } else if j == 0 {
                (false, format!("({c})"))
            } else {
                (false, format!("({c})*D^{j}"))
            };
            match (first, negative) {
                (true, true) => f.write_str("-")?,
                (true, false) => {}
                (false, true) => f.write_str(" - ")?,
                (false, false) => f.write_str(" + ")?,
            }
            f.write_str(&body)?;
            first = false;
        }
        Ok(())
    }
}

/// Kolmogorov generator `L = 1/2 D^2 - V' D`.
pub fn generator(v: &Potential) -> Result<DiffOp> {
    let drift = v.require_symbolic()?.derivative(1);
    Ok(DiffOp::new(vec![
        Expr::zero(),
        -drift,
        Expr::constant(Rational::new(1.into(), 2.into())),
    ]))
}

/// Adjoint of `b` in `L^2(rho)`.
pub fn rho_adjoint(b: &DiffOp, v: &Potential) -> Result<DiffOp> {
    b.rho_adjoint(v)
}

/// Memoized expansion of one implicit scheme for one potential: implicit-map
/// coefficients `d_k`, weak expansion operators `A_n` and modified
/// generators `L_n` (with `L_0 = L`).
#[derive(Debug, Clone)]
pub struct Derivation {
    scheme: Scheme,
    /// `V^{(i)} / (i-1)!` for `i >= 1`, index `i - 1`: Taylor weights of `V'`.
    drift_taylor: Vec<Expr>,
    generator: DiffOp,
    dk: Vec<Expr>,
    a: Vec<DiffOp>,
    l: Vec<DiffOp>,
    /// `powers[l-1][s]`: coefficient of `delta^s` in the `l`-fold product of
    /// the modified generator series.
    powers: Vec<Vec<DiffOp>>,
}

impl Derivation {
    pub fn new(v: &Potential, scheme: Scheme) -> Result<Self> {
        if !scheme.is_implicit() {
            return Err(Error::UnsupportedScheme(scheme));
        }
        let poly = v.require_symbolic()?;
        let drift_taylor = (1..=poly.degree())
            .map(|i| {
                poly.derivative(i)
                    .scale(&Rational::new(1.into(), factorial(i as u32 - 1)))
            })
            .collect();
        let generator = generator(v)?;
        Ok(Self {
            scheme,
            drift_taylor,
            generator: generator.clone(),
            dk: Vec::new(),
            a: vec![DiffOp::identity()],
            l: vec![generator],
            powers: Vec::new(),
        })
    }

    pub fn scheme(&self) -> Scheme {
        self.scheme
    }

    pub fn generator(&self) -> &DiffOp {
        &self.generator
    }

    /// k-th coefficient (k >= 1) of the implicit map: in powers of `delta`
    /// for the split-step scheme, in powers of `sqrt(delta)` for implicit
    /// Euler.
    pub fn dk(&mut self, k: usize) -> &Expr {
        assert!(k >= 1, "d_k is defined for k >= 1");
        while self.dk.len() < k {
            let next = self.next_dk();
            self.dk.push(next);
        }
        &self.dk[k - 1]
    }

    fn next_dk(&self) -> Expr {
        let k = self.dk.len() + 1;
        let minus_drift = -self.drift_taylor[0].clone();
        match self.scheme {
            // Psi = x + eps, eps = -delta V'(x + eps)
            Scheme::SplitStep => {
                if k == 1 {
                    return minus_drift;
                }
                -self.drift_correction(k - 1)
            }
            // z = x + eps, eps = theta eta - theta^2 V'(x + eps)
            Scheme::ImplicitEuler => match k {
                1 => Expr::eta(),
                2 => minus_drift,
                _ => -self.drift_correction(k - 2),
            },
            Scheme::ExplicitEuler => unreachable!("rejected in new"),
        }
    }

    /// `sum_{i>=1} V^{(i+1)}/i! [t^m] eps^i` using the known coefficients of eps.
    fn drift_correction(&self, m: usize) -> Expr {
        let mut eps = vec![Expr::zero(); m + 1];
        for (k, d) in self.dk.iter().enumerate().take(m) {
            eps[k + 1] = d.clone();
        }
        let mut out = Expr::zero();
        let mut power = eps.clone();
        for i in 1..=m {
            if i > 1 {
                power = series_mul(&power, &eps, m);
            }
            if let Some(w) = self.drift_taylor.get(i) {
                if !power[m].is_zero() {
                    out += &(w * &power[m]);
                }
            }
        }
        out
    }

    /// Weak expansion operator `A_n` (order `2n`).
    pub fn weak_operator(&mut self, n: usize) -> DiffOp {
        while self.a.len() <= n {
            let m = self.a.len();
            let next = match self.scheme {
                Scheme::SplitStep => self.split_step_weak_operator(m),
                _ => self.series_weak_operator(m),
            };
            self.a.push(next);
        }
        self.a[n].clone()
    }

    /// Closed formula for the split-step scheme:
    /// `sum_{m+k=n, m>=1} sum_{j<=m} E[eta^{2k}]/(j!(2k)!) sum_{k_1+..+k_j=m} d_{k_1}..d_{k_j} D^{j+2k}`
    /// plus `E[eta^{2n}]/(2n)! D^{2n}`.
    fn split_step_weak_operator(&mut self, n: usize) -> DiffOp {
        if n == 0 {
            return DiffOp::identity();
        }
        self.dk(n);
        let mut coeffs = vec![Expr::zero(); 2 * n + 1];
        for m in 1..=n {
            let k = n - m;
            let eta_weight = Rational::new(1.into(), factorial(2 * k as u32)) * gaussian_moment(2 * k as u32);
            for j in 1..=m {
                let mut sum = Expr::zero();
                for parts in compositions(m, j) {
                    let mut prod = Expr::one();
                    for p in parts {
                        prod = &prod * &self.dk[p - 1];
                    }
                    sum += &prod;
                }
                let w = &eta_weight / Rational::from_integer(factorial(j as u32));
                coeffs[j + 2 * k] += &sum.scale(&w);
            }
        }
        let top = gaussian_moment(2 * n as u32) / Rational::from_integer(factorial(2 * n as u32));
        coeffs[2 * n] += &Expr::constant(top);
        DiffOp::new(coeffs)
    }

    /// Generic route: with the one-step increment `h = sum_k theta^k h_k`
    /// (`theta = sqrt(delta)`), the coefficient of `D^j` in `A_n` is
    /// `E[[theta^{2n}] h^j] / j!`.
    pub fn series_weak_operator(&mut self, n: usize) -> DiffOp {
        if n == 0 {
            return DiffOp::identity();
        }
        let top = 2 * n;
        let mut h = vec![Expr::zero(); top + 1];
        match self.scheme {
            Scheme::SplitStep => {
                h[1] = Expr::eta();
                for k in 1..=n {
                    h[2 * k] = self.dk(k).clone();
                }
            }
            _ => {
                for (k, slot) in h.iter_mut().enumerate().skip(1) {
                    *slot = self.dk(k).clone();
                }
            }
        }
        let mut coeffs = vec![Expr::zero(); top + 1];
        let mut power = h.clone();
        for j in 1..=top {
            if j > 1 {
                power = series_mul(&power, &h, top);
            }
            let c = power[top].expect_eta();
            coeffs[j] = c.scale(&Rational::new(1.into(), factorial(j as u32)));
        }
        DiffOp::new(coeffs)
    }

    /// Modified generator `L_n` (`L_0 = L`), from
    /// `L_n = A_{n+1} + sum_{l=1}^{n} B_l/l! sum_{n_1+..+n_l+m = n-l} L_{n_1}..L_{n_l} A_{m+1}`.
    pub fn modified_generator(&mut self, n: usize) -> DiffOp {
        while self.l.len() <= n {
            let m = self.l.len();
            let next = self.next_modified_generator(m);
            self.l.push(next);
        }
        self.l[n].clone()
    }

    fn next_modified_generator(&mut self, n: usize) -> DiffOp {
        for k in 1..=n + 1 {
            self.weak_operator(k);
        }
        let mut out = self.a[n + 1].clone();
        for ell in 1..=n {
            let weight = bernoulli(ell as u32) / Rational::from_integer(factorial(ell as u32));
            if weight.is_zero() {
                continue;
            }
            let mut inner = DiffOp::zero();
            for m in 0..=(n - ell) {
                let product = self.power(ell, n - ell - m).compose(&self.a[m + 1]);
                inner = inner.add(&product);
            }
            out = out.add(&inner.scale(&weight));
        }
        out
    }

    /// Coefficient of `delta^s` in the `ell`-fold product of
    /// `L_0 + delta L_1 + ...`; needs `L_0..=L_s`.
    fn power(&mut self, ell: usize, s: usize) -> DiffOp {
        while self.powers.len() < ell {
            self.powers.push(Vec::new());
        }
        while self.powers[ell - 1].len() <= s {
            let t = self.powers[ell - 1].len();
            let value = if ell == 1 {
                self.l[t].clone()
            } else {
                let mut acc = DiffOp::zero();
                for a in 0..=t {
                    let rest = self.power(ell - 1, t - a);
                    acc = acc.add(&self.l[a].compose(&rest));
                }
                acc
            };
            self.powers[ell - 1].push(value);
        }
        self.powers[ell - 1][s].clone()
    }

    /// `L + sum_{n=1}^{N} delta^n L_n` with `delta` taken as the exact dyadic
    /// rational of the float.
    pub fn truncated_generator(&mut self, order: usize, delta: f64) -> Result<DiffOp> {
        let d = rational_from_f64(delta)?;
        let mut out = self.generator.clone();
        let mut pow = Rational::one();
        for n in 1..=order {
            pow *= &d;
            out = out.add(&self.modified_generator(n).scale(&pow));
        }
        Ok(out)
    }
}

/// Product of truncated power series (index = power), dropping powers above `top`.
fn series_mul(a: &[Expr], b: &[Expr], top: usize) -> Vec<Expr> {
    let mut out = vec![Expr::zero(); top + 1];
    for (i, ai) in a.iter().enumerate() {
        if ai.is_zero() {
            continue;
        }
        for (j, bj) in b.iter().enumerate() {
            if i + j > top {
                break;
            }
            if !bj.is_zero() {
                out[i + j] += &(ai * bj);
            }
        }
    }
    out
}

/// Ordered tuples of `parts` positive integers summing to `total`.
fn compositions(total: usize, parts: usize) -> Vec<Vec<usize>> {
    if parts == 0 {
        return if total == 0 { vec![vec![]] } else { vec![] };
    }
    let mut out = Vec::new();
    for first in 1..=total.saturating_sub(parts - 1) {
        for mut rest in compositions(total - first, parts - 1) {
            rest.insert(0, first);
            out.push(rest);
        }
    }
    out
}

/// Split-step implicit-map coefficient `d_k` (eta-free).
pub fn dk_split_step(v: &Potential, k: usize) -> Result<Expr> {
    Ok(Derivation::new(v, Scheme::SplitStep)?.dk(k).clone())
}

/// Implicit-Euler implicit-map coefficient `d_k(x, eta)` in powers of `sqrt(delta)`.
pub fn dk_implicit_euler(v: &Potential, k: usize) -> Result<Expr> {
    Ok(Derivation::new(v, Scheme::ImplicitEuler)?.dk(k).clone())
}

/// `A_n` of the given scheme.
pub fn weak_expansion_operator(v: &Potential, n: usize, scheme: Scheme) -> Result<DiffOp> {
    Ok(Derivation::new(v, scheme)?.weak_operator(n))
}

/// `L_n` of the given scheme (`n >= 1`; `n = 0` returns `L`).
pub fn modified_generator(v: &Potential, n: usize, scheme: Scheme) -> Result<DiffOp> {
    Ok(Derivation::new(v, scheme)?.modified_generator(n))
}

/// Rebuilds `A_n = sum_{l=1}^{n} 1/l! sum_{n_1+..+n_l = n-l} L_{n_1}..L_{n_l}`
/// from `generators = [L_0, .., L_{n-1}]`.
pub fn reconstruct_weak_operator(n: usize, generators: &[DiffOp]) -> Result<DiffOp> {
    if n == 0 {
        return Ok(DiffOp::identity());
    }
    if generators.len() < n {
        return Err(Error::InvalidArgument(format!(
            "A_{n} needs L_0..L_{} ({} given)",
            n - 1,
            generators.len()
        )));
    }
    // powers[l-1][s] over s <= n - l
    let mut powers: Vec<Vec<DiffOp>> = vec![generators[..n].to_vec()];
    for ell in 2..=n {
        let prev = &powers[ell - 2];
        let row: Vec<DiffOp> = (0..=(n - ell))
            .map(|s| {
                (0..=s).fold(DiffOp::zero(), |acc, a| {
                    acc.add(&generators[a].compose(&prev[s - a]))
                })
            })
            .collect();
        powers.push(row);
    }
    let mut out = DiffOp::zero();
    for ell in 1..=n {
        let w = Rational::new(1.into(), factorial(ell as u32));
        out = out.add(&powers[ell - 1][n - ell].scale(&w));
    }
    Ok(out)
}

/// `L + sum_{n<=N} delta^n L_n`; errors when `delta >= delta_0`.
pub fn truncated_generator(v: &Potential, order: usize, delta: f64, scheme: Scheme) -> Result<DiffOp> {
    v.check_delta(delta)?;
    Derivation::new(v, scheme)?.truncated_generator(order, delta)
}

/// Renders a rational for operator listings.
pub fn render_rational(r: &Rational) -> String {
    format_rational(r)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::symbolic::ratio;
    use proptest::prelude::*;

    fn poly(c: &[i64]) -> Expr {
        Expr::from_coeffs(&c.iter().map(|&v| int(v)).collect::<Vec<_>>())
    }

    fn op(c: &[Expr]) -> DiffOp {
        DiffOp::new(c.to_vec())
    }

    fn half() -> Rational {
        ratio(1, 2)
    }

    fn x_times(r: Rational) -> Expr {
        Expr::monomial(r, 1, 0)
    }

    #[test]
    fn ou_generator() {
        let l = generator(&Potential::ou()).unwrap();
        assert_eq!(l, op(&[Expr::zero(), -Expr::x(), Expr::constant(half())]));
        assert_eq!(l.apply(&poly(&[0, 0, 1])), poly(&[1, 0, -2]));
        assert_eq!(l.apply(&Expr::x()), -Expr::x());
        assert_eq!(l.to_string(), "1/2*D^2 - x*D^1");
    }

    #[test]
    fn double_well_generator() {
        let l = generator(&Potential::double_well()).unwrap();
        assert_eq!(l.coeff(1), poly(&[0, 1, 0, -1]));
        // 1/2 * 2 - (x^3 - x) * 2x
        assert_eq!(l.apply(&poly(&[0, 0, 1])), poly(&[1, 0, 2, 0, -2]));
        assert_eq!(l.to_string(), "1/2*D^2 + (-x^3 + x)*D^1");
    }

    #[test]
    fn numeric_potential_is_rejected() {
        let v = Potential::separable(&Potential::ou(), 2).unwrap();
        assert!(matches!(generator(&v), Err(Error::NotSymbolic)));
        assert!(matches!(
            Derivation::new(&Potential::ou(), Scheme::ExplicitEuler),
            Err(Error::UnsupportedScheme(_))
        ));
    }

    #[test]
    fn composition_examples() {
        let d = DiffOp::derivative();
        let xd = op(&[Expr::zero(), Expr::x()]);
        assert_eq!(d.compose(&xd), op(&[Expr::zero(), Expr::one(), Expr::x()]));
        assert_eq!(d.apply(&poly(&[0, 0, 0, 1])), poly(&[0, 0, 3]));
        let l = generator(&Potential::ou()).unwrap();
        let ll = l.compose(&l);
        let expected = op(&[
            Expr::zero(),
            Expr::x(),
            poly(&[-1, 0, 1]),
            -Expr::x(),
            Expr::constant(ratio(1, 4)),
        ]);
        assert_eq!(ll, expected);
        for m in 0..=6 {
            let f = Expr::monomial(int(1), m, 0);
            assert_eq!(ll.apply(&f), l.apply(&l.apply(&f)));
        }
        assert_eq!(l.compose(&DiffOp::identity()), l);
        assert_eq!(DiffOp::identity().compose(&l), l);
    }

    #[test]
    fn ou_is_self_adjoint_and_adjoint_of_d() {
        for v in [Potential::ou(), Potential::double_well()] {
            let l = generator(&v).unwrap();
            assert_eq!(l.rho_adjoint(&v).unwrap(), l);
        }
        let v = Potential::ou();
        let d_star = DiffOp::derivative().rho_adjoint(&v).unwrap();
        assert_eq!(d_star, op(&[x_times(int(2)), -Expr::one()]));
    }

    #[test]
    fn adjoint_applied_to_one() {
        let v = Potential::ou();
        let b = op(&[Expr::zero(), x_times(half()), Expr::constant(half())]);
        let bstar1 = b.rho_adjoint(&v).unwrap().apply(&Expr::one());
        assert_eq!(bstar1, Expr::from_terms([(int(3), 2, 0), (ratio(-3, 2), 0, 0)]));
    }

    #[test]
    fn split_step_dk() {
        let ou = Potential::ou();
        let mut d = Derivation::new(&ou, Scheme::SplitStep).unwrap();
        for k in 1..=6 {
            let sign = if k % 2 == 0 { 1 } else { -1 };
            assert_eq!(d.dk(k), &x_times(int(sign)));
        }
        let dw = Potential::double_well();
        let drift = poly(&[0, -1, 0, 1]);
        assert_eq!(dk_split_step(&dw, 1).unwrap(), -drift.clone());
        assert_eq!(dk_split_step(&dw, 2).unwrap(), &poly(&[-1, 0, 3]) * &drift);
    }

    #[test]
    fn implicit_euler_dk() {
        for v in [Potential::ou(), Potential::double_well()] {
            let mut d = Derivation::new(&v, Scheme::ImplicitEuler).unwrap();
            assert_eq!(d.dk(1), &Expr::eta());
            assert_eq!(d.dk(2), &-v.symbolic().unwrap().derivative(1));
            for k in 0..=3 {
                assert!(d.dk(2 * k + 1).expect_eta().is_zero(), "E d_{}", 2 * k + 1);
            }
        }
        // (x + theta eta) / (1 + theta^2) -> theta^3 coefficient is -eta
        assert_eq!(dk_implicit_euler(&Potential::ou(), 3).unwrap(), -Expr::eta());
        assert_eq!(dk_implicit_euler(&Potential::ou(), 4).unwrap(), Expr::x());
    }

    #[test]
    fn first_weak_operators() {
        for v in [Potential::ou(), Potential::double_well()] {
            for s in [Scheme::SplitStep, Scheme::ImplicitEuler] {
                let mut d = Derivation::new(&v, s).unwrap();
                assert_eq!(d.weak_operator(0), DiffOp::identity());
                assert_eq!(&d.weak_operator(1), d.generator());
                for n in 1..=3 {
                    assert!(d.weak_operator(n).apply(&Expr::one()).is_zero());
                    assert!(d.weak_operator(n).order().unwrap() <= 2 * n);
                }
            }
        }
    }

    #[test]
    fn split_step_a2_for_ou() {
        let a2 = weak_expansion_operator(&Potential::ou(), 2, Scheme::SplitStep).unwrap();
        let expected = op(&[
            Expr::zero(),
            Expr::x(),
            Expr::monomial(half(), 2, 0),
            x_times(-half()),
            Expr::constant(ratio(1, 8)),
        ]);
        assert_eq!(a2, expected);
    }

    #[test]
    fn split_step_closed_form_matches_series_route() {
        for v in [Potential::ou(), Potential::double_well()] {
            let mut d = Derivation::new(&v, Scheme::SplitStep).unwrap();
            for n in 0..=4 {
                let closed = d.weak_operator(n);
                assert_eq!(closed, d.series_weak_operator(n), "n = {n}");
            }
        }
    }

    #[test]
    fn first_modified_generators_for_ou() {
        let ou = Potential::ou();
        let split = modified_generator(&ou, 1, Scheme::SplitStep).unwrap();
        assert_eq!(split, op(&[Expr::zero(), x_times(half()), Expr::constant(half())]));
        assert_eq!(split.to_string(), "1/2*D^2 + 1/2*x*D^1");
        let implicit = modified_generator(&ou, 1, Scheme::ImplicitEuler).unwrap();
        assert_eq!(implicit, op(&[Expr::zero(), x_times(half()), Expr::constant(-half())]));
        assert_eq!(implicit.to_string(), "-1/2*D^2 + 1/2*x*D^1");
    }

    #[test]
    fn l1_is_a2_minus_half_l_squared() {
        for s in [Scheme::SplitStep, Scheme::ImplicitEuler] {
            let mut d = Derivation::new(&Potential::double_well(), s).unwrap();
            let l = d.generator().clone();
            let expected = d.weak_operator(2).sub(&l.compose(&l).scale(&half()));
            assert_eq!(d.modified_generator(1), expected);
        }
    }

    #[test]
    fn reconstruction_small_orders() {
        let mut d = Derivation::new(&Potential::double_well(), Scheme::SplitStep).unwrap();
        let ls: Vec<DiffOp> = (0..3).map(|n| d.modified_generator(n)).collect();
        assert_eq!(reconstruct_weak_operator(1, &ls).unwrap(), ls[0]);
        let expected = ls[1].add(&ls[0].compose(&ls[0]).scale(&half()));
        assert_eq!(reconstruct_weak_operator(2, &ls).unwrap(), expected);
        assert!(reconstruct_weak_operator(4, &ls).is_err());
    }

    #[test]
    fn truncated_generator_examples() {
        let ou = Potential::ou();
        let l = truncated_generator(&ou, 0, 0.1, Scheme::SplitStep).unwrap();
        assert_eq!(l, generator(&ou).unwrap());
        let l1 = truncated_generator(&ou, 1, 0.1, Scheme::SplitStep).unwrap();
        let c2 = crate::symbolic::rational_to_f64(&l1.coeff(2).coeff(0, 0));
        let c1 = crate::symbolic::rational_to_f64(&l1.coeff(1).coeff(1, 0));
        assert_eq!(c2, 0.55);
        assert_eq!(c1, -0.95);
        assert!(l1.apply(&Expr::one()).is_zero());
        assert!(truncated_generator(&Potential::double_well(), 1, 1.0, Scheme::SplitStep).is_err());
    }

    #[test]
    fn grid_application_matches_exact() {
        let l = generator(&Potential::double_well()).unwrap();
        let grid = Grid::symmetric(3.0, 601).unwrap();
        let f = poly(&[1, 0, 0, 0, 1]);
        let exact = GridFunction::from_expr(grid, &l.apply(&f));
        let untagged = GridFunction::new(grid, GridFunction::from_expr(grid, &f).values).unwrap();
        let fd = l.apply_on_grid(&untagged, 6);
        for i in 0..grid.n {
            assert!((fd.values[i] - exact.values[i]).abs() < 1e-7 * (1.0 + exact.values[i].abs()));
        }
        assert_eq!(l.apply_on_grid(&GridFunction::from_expr(grid, &f), 6), exact);
    }

    #[test]
    fn rendering_of_composite_coefficients() {
        let l = generator(&Potential::ou()).unwrap();
        let ll = l.compose(&l);
        assert_eq!(ll.to_string(), "1/4*D^4 - x*D^3 + (x^2 - 1)*D^2 + x*D^1");
        assert_eq!(DiffOp::zero().to_string(), "0");
        assert_eq!(DiffOp::multiplication(poly(&[1, 1])).to_string(), "(x + 1)");
    }

    #[test]
    fn adjoint_quadrature_identity() {
        use crate::grid::{Grid, GridFunction};
        use crate::stationary;
        use rand::{Rng, SeedableRng};
        let g = Grid::standard();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let mut rand_poly = |deg: usize| -> Expr {
            let c: Vec<Rational> = (0..=deg).map(|_| ratio(rng.random_range(-6..=6), 3)).collect();
            Expr::from_coeffs(&c)
        };
        for v in [Potential::ou(), Potential::double_well()] {
            let rho = stationary::invariant_density(&v, g).unwrap();
            let mut d = Derivation::new(&v, Scheme::SplitStep).unwrap();
            let ops = [generator(&v).unwrap(), d.modified_generator(1), op(&[rand_poly(2), rand_poly(2), rand_poly(1)])];
            for b in &ops {
                let bs = b.rho_adjoint(&v).unwrap();
                for _ in 0..5 {
                    let (f, h) = (rand_poly(4), rand_poly(4));
                    let lhs = stationary::mean(&GridFunction::from_expr(g, &(&b.apply(&f) * &h)), &rho);
                    let rhs = stationary::mean(&GridFunction::from_expr(g, &(&f * &bs.apply(&h))), &rho);
                    let scale = stationary::mean(
                        &GridFunction::from_fn(g, |x| (b.apply(&f).evaluate(x, 0.0) * h.evaluate(x, 0.0)).abs()),
                        &rho,
                    );
                    assert!((lhs - rhs).abs() <= 1e-8 * scale.max(1.0), "{lhs} vs {rhs}");
                }
            }
        }
    }

    /// Fitted order minus `N` of `sup_{|x| <= radius} |E phi(X_1) - sum_{n<=N} delta^n A_n phi|`.
    fn one_step_orders(deltas: &[f64], radius: f64) -> Vec<(String, f64)> {
        use crate::integrate::SchemeConfig;
        use crate::markov::one_step_expectation;
        use crate::util::loglog_slope;
        let phi = poly(&[0, 1, 0, 1]);
        let xs: Vec<f64> = (0..=20).map(|i| radius * (i as f64 / 10.0 - 1.0)).collect();
        let mut out = Vec::new();
        for v in [Potential::ou(), Potential::double_well()] {
            for s in [Scheme::SplitStep, Scheme::ImplicitEuler] {
                let mut d = Derivation::new(&v, s).unwrap();
                for n_max in 1..=2 {
                    let terms: Vec<Expr> = (0..=n_max).map(|n| d.weak_operator(n).apply(&phi)).collect();
                    let errs: Vec<f64> = deltas
                        .iter()
                        .map(|&delta| {
                            let cfg = SchemeConfig::new(s, delta, v.clone()).unwrap();
                            xs.iter()
                                .map(|&x| {
                                    let e = one_step_expectation(&cfg, x, |y| y + y * y * y).unwrap();
                                    let series: f64 = terms
                                        .iter()
                                        .enumerate()
                                        .map(|(n, t)| delta.powi(n as i32) * t.evaluate(x, 0.0))
                                        .sum();
                                    (e - series).abs()
                                })
                                .fold(0.0, f64::max)
                        })
                        .collect();
                    let excess = loglog_slope(deltas, &errs) - n_max as f64;
                    out.push((format!("{s} N={n_max} |x|<={radius}"), excess));
                }
            }
        }
        out
    }

    #[test]
    fn one_step_consistency_order() {
        for (case, excess) in one_step_orders(&[1e-3, 3e-3, 1e-2, 3e-2, 1e-1], 1.0) {
            assert!(excess >= 0.8, "{case}: order N + {excess}");
        }
    }

    fn arb_poly(max_deg: usize) -> impl Strategy<Value = Expr> {
        prop::collection::vec((-4i64..=4, 1i64..=3), 0..=max_deg)
            .prop_map(|v| Expr::from_coeffs(&v.into_iter().map(|(p, q)| ratio(p, q)).collect::<Vec<_>>()))
    }

    fn arb_op(order: usize, deg: usize) -> impl Strategy<Value = DiffOp> {
        prop::collection::vec(arb_poly(deg), 0..=order + 1).prop_map(DiffOp::new)
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn composition_is_application(b1 in arb_op(3, 3), b2 in arb_op(3, 3), f in arb_poly(6)) {
            prop_assert_eq!(b1.compose(&b2).apply(&f), b1.apply(&b2.apply(&f)));
        }

        #[test]
        fn adjoint_is_an_involution(b in arb_op(3, 4)) {
            for v in [Potential::ou(), Potential::double_well()] {
                let twice = b.rho_adjoint(&v).unwrap().rho_adjoint(&v).unwrap();
                prop_assert_eq!(&twice, &b);
            }
        }
    }
}
