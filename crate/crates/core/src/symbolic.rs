//! Exact polynomial expressions in the space variable `x` and a formal
//! standard Gaussian variable `eta`.
//!
//! Coefficients are arbitrary-precision rationals, so identities between
//! derived operators can be checked by plain equality.

use std::collections::BTreeMap;
use std::fmt;
use std::ops::{Add, AddAssign, Mul, Neg, Sub};

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};

use crate::error::{Error, Result};

/// Exact rational number (normalized, positive denominator).
pub type Rational = BigRational;

/// Builds the rational `num/den`.
pub fn ratio(num: i64, den: i64) -> Rational {
    Rational::new(BigInt::from(num), BigInt::from(den))
}

/// Builds the integer rational `n`.
pub fn int(n: i64) -> Rational {
    Rational::from_integer(BigInt::from(n))
}

/// Exact dyadic rational equal to the given finite float.
pub fn rational_from_f64(v: f64) -> Result<Rational> {
    Rational::from_float(v).ok_or_else(|| Error::Parse(format!("non-finite number {v}")))
}

pub fn rational_to_f64(r: &Rational) -> f64 {
    r.to_f64().unwrap_or(f64::NAN)
}

/// Parses `"p/q"`, an integer, or a decimal string such as `"-0.25"` or
/// `"1.5e-3"` into an exact rational.
pub fn parse_rational(s: &str) -> Result<Rational> {
    let s = s.trim();
    let bad = || Error::Parse(format!("cannot parse {s:?} as a rational"));
    if let Some((p, q)) = s.split_once('/') {
        let p: BigInt = p.trim().parse().map_err(|_| bad())?;
        let q: BigInt = q.trim().parse().map_err(|_| bad())?;
        if q.is_zero() {
            return Err(Error::Parse(format!("zero denominator in {s:?}")));
        }
        return Ok(Rational::new(p, q));
    }
    let (mantissa, exponent) = match s.find(['e', 'E']) {
        Some(i) => (&s[..i], s[i + 1..].parse::<i32>().map_err(|_| bad())?),
        None => (s, 0),
    };
    let (negative, digits) = match mantissa.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, mantissa.strip_prefix('+').unwrap_or(mantissa)),
    };
    let (whole, frac) = digits.split_once('.').unwrap_or((digits, ""));
    if whole.is_empty() && frac.is_empty() {
        return Err(bad());
    }
    if !whole.chars().chain(frac.chars()).all(|c| c.is_ascii_digit()) {
        return Err(bad());
    }
    let all_digits = format!("{whole}{frac}");
    let numer: BigInt = if all_digits.is_empty() {
        BigInt::zero()
    } else {
        all_digits.parse().map_err(|_| bad())?
    };
    let scale = exponent - frac.len() as i32;
    let ten = BigInt::from(10);
    let mut value = Rational::from_integer(numer);
    if scale >= 0 {
        value *= Rational::from_integer(num_traits::pow(ten, scale as usize));
    } else {
        value /= Rational::from_integer(num_traits::pow(ten, (-scale) as usize));
    }
    Ok(if negative { -value } else { value })
}

/// Renders a rational as `"p"` or `"p/q"`.
pub fn format_rational(r: &Rational) -> String {
    if r.denom().is_one() {
        r.numer().to_string()
    } else {
        format!("{}/{}", r.numer(), r.denom())
    }
}

/// Formal variable of an [`Expr`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Var {
    X,
    Eta,
}

/// Polynomial in `x` and `eta` with exact rational coefficients.
///
/// Terms are keyed by `(deg_x, deg_eta)`. Zero coefficients are never stored,
/// so two expressions are equal exactly when their term maps are equal.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash)]
pub struct Expr {
    terms: BTreeMap<(u32, u32), Rational>,
}

impl Expr {
    pub fn zero() -> Self {
        Self::default()
    }

    pub fn one() -> Self {
        Self::constant(Rational::one())
    }

    pub fn constant(c: Rational) -> Self {
        Self::monomial(c, 0, 0)
    }

    pub fn x() -> Self {
        Self::monomial(Rational::one(), 1, 0)
    }

    pub fn eta() -> Self {
        Self::monomial(Rational::one(), 0, 1)
    }

    pub fn monomial(c: Rational, deg_x: u32, deg_eta: u32) -> Self {
        let mut terms = BTreeMap::new();
        if !c.is_zero() {
            terms.insert((deg_x, deg_eta), c);
        }
        Self { terms }
    }

    /// Polynomial `sum_k coeffs[k] x^k`.
    pub fn from_coeffs(coeffs: &[Rational]) -> Self {
        let mut e = Self::zero();
        for (k, c) in coeffs.iter().enumerate() {
            e.add_term((k as u32, 0), c.clone());
        }
        e
    }

    /// Builds an expression from arbitrary `(coefficient, deg_x, deg_eta)`
    /// triples, merging duplicates and dropping zeros.
    pub fn from_terms<I>(terms: I) -> Self
    where
        I: IntoIterator<Item = (Rational, u32, u32)>,
    {
        let mut e = Self::zero();
        for (c, a, b) in terms {
            e.add_term((a, b), c);
        }
        e
    }

    fn add_term(&mut self, key: (u32, u32), c: Rational) {
        if c.is_zero() {
            return;
        }
        match self.terms.entry(key) {
            std::collections::btree_map::Entry::Vacant(v) => {
                v.insert(c);
            }
            std::collections::btree_map::Entry::Occupied(mut o) => {
                *o.get_mut() += c;
                if o.get().is_zero() {
                    o.remove();
                }
            }
        }
    }

    /// Re-normalizes the term map. Every constructor already returns
    /// canonical values, so this is the identity on reachable states.
    pub fn canonical(&self) -> Self {
        Self::from_terms(self.terms.iter().map(|(&(a, b), c)| (c.clone(), a, b)))
    }

    pub fn terms(&self) -> impl Iterator<Item = (u32, u32, &Rational)> {
        self.terms.iter().map(|(&(a, b), c)| (a, b, c))
    }

    pub fn coeff(&self, deg_x: u32, deg_eta: u32) -> Rational {
        self.terms
            .get(&(deg_x, deg_eta))
            .cloned()
            .unwrap_or_else(Rational::zero)
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn is_eta_free(&self) -> bool {
        self.terms.keys().all(|&(_, b)| b == 0)
    }

    /// Constant value when the expression has no variable part.
    pub fn as_constant(&self) -> Option<Rational> {
        match self.terms.len() {
            0 => Some(Rational::zero()),
            1 => self.terms.get(&(0, 0)).cloned(),
            _ => None,
        }
    }

    pub fn num_terms(&self) -> usize {
        self.terms.len()
    }

    /// Highest power of `x`, or `None` for the zero expression.
    pub fn degree_x(&self) -> Option<u32> {
        self.terms.keys().map(|&(a, _)| a).max()
    }

    pub fn degree_eta(&self) -> Option<u32> {
        self.terms.keys().map(|&(_, b)| b).max()
    }

    /// Coefficients of an eta-free expression in increasing powers of `x`.
    pub fn x_coeffs(&self) -> Vec<Rational> {
        debug_assert!(self.is_eta_free());
        let n = self.degree_x().map_or(0, |d| d as usize + 1);
        let mut out = vec![Rational::zero(); n];
        for (&(a, _), c) in &self.terms {
            out[a as usize] += c;
        }
        out
    }

    pub fn scale(&self, s: &Rational) -> Self {
        if s.is_zero() {
            return Self::zero();
        }
        Self {
            terms: self
                .terms
                .iter()
                .map(|(k, c)| (*k, c * s))
                .collect(),
        }
    }

    pub fn pow(&self, n: u32) -> Self {
        let mut acc = Self::one();
        for _ in 0..n {
            acc = &acc * self;
        }
        acc
    }

    pub fn differentiate(&self, var: Var) -> Self {
        let mut out = Self::zero();
        for (&(a, b), c) in &self.terms {
            match var {
                Var::X if a > 0 => out.add_term((a - 1, b), c * BigInt::from(a)),
                Var::Eta if b > 0 => out.add_term((a, b - 1), c * BigInt::from(b)),
                _ => {}
            }
        }
        out
    }

    /// k-fold derivative in `x`.
    pub fn dx_n(&self, k: u32) -> Self {
        let mut e = self.clone();
        for _ in 0..k {
            if e.is_zero() {
                break;
            }
            e = e.differentiate(Var::X);
        }
        e
    }

    /// Replaces every `eta^m` by the standard Gaussian moment `E[eta^m]`.
    pub fn expect_eta(&self) -> Self {
        let mut out = Self::zero();
        for (&(a, b), c) in &self.terms {
            if b % 2 == 0 {
                out.add_term((a, 0), c * gaussian_moment(b));
            }
        }
        out
    }

    /// Floating evaluation, Horner in `x` for each power of `eta`.
    pub fn evaluate(&self, x: f64, eta: f64) -> f64 {
        let mut by_eta: BTreeMap<u32, Vec<(u32, f64)>> = BTreeMap::new();
        for (&(a, b), c) in &self.terms {
            by_eta.entry(b).or_default().push((a, rational_to_f64(c)));
        }
        let mut total = 0.0;
        for (b, monos) in &by_eta {
            total += horner_sparse(monos, x) * eta.powi(*b as i32);
        }
        total
    }

    /// Exact evaluation at rational points.
    pub fn evaluate_exact(&self, x: &Rational, eta: &Rational) -> Rational {
        let mut total = Rational::zero();
        for (&(a, b), c) in &self.terms {
            total += c * num_traits::pow(x.clone(), a as usize) * num_traits::pow(eta.clone(), b as usize);
        }
        total
    }

    /// Coefficients as floats for fast repeated evaluation of an eta-free
    /// polynomial (index = power of `x`).
    pub fn to_float_coeffs(&self) -> Vec<f64> {
        self.x_coeffs().iter().map(rational_to_f64).collect()
    }
}

fn horner_sparse(monos: &[(u32, f64)], x: f64) -> f64 {
    let deg = monos.iter().map(|m| m.0).max().unwrap_or(0) as usize;
    let mut dense = vec![0.0; deg + 1];
    for &(a, c) in monos {
        dense[a as usize] += c;
    }
    horner(&dense, x)
}

/// Evaluates `sum_k c[k] x^k`.
pub fn horner(coeffs: &[f64], x: f64) -> f64 {
    coeffs.iter().rev().fold(0.0, |acc, &c| acc * x + c)
}

/// `E[eta^m]` for a standard normal: `(m-1)!!` for even `m`, zero otherwise.
pub fn gaussian_moment(m: u32) -> Rational {
    if m % 2 == 1 {
        return Rational::zero();
    }
    let mut acc = BigInt::one();
    let mut k = 1u32;
    while k < m {
        acc *= k;
        k += 2;
    }
    Rational::from_integer(acc)
}

pub fn factorial(n: u32) -> BigInt {
    (1..=n).fold(BigInt::one(), |acc, k| acc * k)
}

/// Bernoulli number `B_n` with `B_1 = -1/2`, i.e. the coefficients of
/// `z / (e^z - 1) = sum B_n z^n / n!`.
///
/// Computed by inverting the power series `sum z^n / (n+1)!`.
pub fn bernoulli(n: u32) -> Rational {
    bernoulli_table(n).pop().expect("table has n + 1 entries")
}

/// `B_0 ..= B_n`.
pub fn bernoulli_table(n: u32) -> Vec<Rational> {
    let n = n as usize;
    // series[k] = 1 / (k+1)!
    let series: Vec<Rational> = (0..=n)
        .map(|k| Rational::new(BigInt::one(), factorial(k as u32 + 1)))
        .collect();
    // inverse[k] = B_k / k!
    let mut inverse: Vec<Rational> = Vec::with_capacity(n + 1);
    inverse.push(Rational::one());
    for k in 1..=n {
        let mut acc = Rational::zero();
        for j in 1..=k {
            acc += &series[j] * &inverse[k - j];
        }
        inverse.push(-acc);
    }
    inverse
        .into_iter()
        .enumerate()
        .map(|(k, c)| c * factorial(k as u32))
        .collect()
}

impl fmt::Display for Expr {
    /// Sum of monomials, descending in `deg_x` then `deg_eta`, for example
    /// `3/2*x^2 - 3/4`.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_zero() {
            return f.write_str("0");
        }
        for (i, (&(a, b), c)) in self.terms.iter().rev().enumerate() {
            let negative = c.is_negative();
            if i == 0 {
                if negative {
                    f.write_str("-")?;
                }
            } else {
                f.write_str(if negative { " - " } else { " + " })?;
            }
            f.write_str(&format_monomial(&c.abs(), a, b))?;
        }
        Ok(())
    }
}

/// Renders `c * x^a * eta^b` for non-negative `c`.
fn format_monomial(c: &Rational, a: u32, b: u32) -> String {
    let mut factors = Vec::new();
    let has_vars = a > 0 || b > 0;
    if !has_vars || !c.is_one() {
        factors.push(format_rational(c));
    }
    match a {
        0 => {}
        1 => factors.push("x".to_string()),
        _ => factors.push(format!("x^{a}")),
    }
    match b {
        0 => {}
        1 => factors.push("eta".to_string()),
        _ => factors.push(format!("eta^{b}")),
    }
    factors.join("*")
}

impl Add<&Expr> for &Expr {
    type Output = Expr;
    fn add(self, rhs: &Expr) -> Expr {
        let mut out = self.clone();
        out += rhs;
        out
    }
}

impl Add for Expr {
    type Output = Expr;
    fn add(mut self, rhs: Expr) -> Expr {
        self += &rhs;
        self
    }
}

impl AddAssign<&Expr> for Expr {
    fn add_assign(&mut self, rhs: &Expr) {
        for (k, c) in &rhs.terms {
            self.add_term(*k, c.clone());
        }
    }
}

impl Neg for &Expr {
    type Output = Expr;
    fn neg(self) -> Expr {
        Expr {
            terms: self.terms.iter().map(|(k, c)| (*k, -c)).collect(),
        }
    }
}

impl Neg for Expr {
    type Output = Expr;
    fn neg(self) -> Expr {
        -&self
    }
}

impl Sub<&Expr> for &Expr {
    type Output = Expr;
    fn sub(self, rhs: &Expr) -> Expr {
        let mut out = self.clone();
        for (k, c) in &rhs.terms {
            out.add_term(*k, -c);
        }
        out
    }
}

impl Sub for Expr {
    type Output = Expr;
    fn sub(self, rhs: Expr) -> Expr {
        &self - &rhs
    }
}

impl Mul<&Expr> for &Expr {
    type Output = Expr;
    fn mul(self, rhs: &Expr) -> Expr {
        let mut out = Expr::zero();
        for (&(a1, b1), c1) in &self.terms {
            for (&(a2, b2), c2) in &rhs.terms {
                out.add_term((a1 + a2, b1 + b2), c1 * c2);
            }
        }
        out
    }
}

impl Mul for Expr {
    type Output = Expr;
    fn mul(self, rhs: Expr) -> Expr {
        &self * &rhs
    }
}

impl From<Rational> for Expr {
    fn from(c: Rational) -> Self {
        Expr::constant(c)
    }
}
