//! Dense univariate polynomials and certified real-root isolation.
//!
//! Root counting uses derivative-chain bracketing: the critical points of
//! `p` are isolated recursively from `p'`, which splits the search interval
//! into pieces on which `p` is monotone. A monotone piece holds a root iff
//! its endpoint values differ in sign, so the count is exact rather than
//! sampled.

use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Real polynomial stored lowest degree first.
#[derive(Clone, PartialEq, Serialize, Deserialize)]
pub struct Polynomial {
    coeffs: Vec<f64>,
}

impl Polynomial {
    /// Builds a polynomial from coefficients `c0, c1, ...`, trimming
    /// trailing zeros so the leading coefficient is nonzero.
    pub fn new(coeffs: Vec<f64>) -> Self {
        let mut p = Polynomial { coeffs };
        p.trim();
        p
    }

    pub fn zero() -> Self {
        Polynomial { coeffs: Vec::new() }
    }

    pub fn constant(c: f64) -> Self {
        Self::new(vec![c])
    }

    /// The monomial `x`.
    pub fn x() -> Self {
        Self::new(vec![0.0, 1.0])
    }

    /// Monic polynomial with the given roots.
    pub fn from_roots(roots: &[f64]) -> Self {
        roots
            .iter()
            .fold(Self::constant(1.0), |acc, &r| acc * Self::new(vec![-r, 1.0]))
    }

    fn trim(&mut self) {
        while matches!(self.coeffs.last(), Some(&c) if c == 0.0) {
            self.coeffs.pop();
        }
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn is_zero(&self) -> bool {
        self.coeffs.is_empty()
    }

    /// Degree, with the zero polynomial reported as `None`.
    pub fn degree(&self) -> Option<usize> {
        self.coeffs.len().checked_sub(1)
    }

    pub fn leading(&self) -> f64 {
        self.coeffs.last().copied().unwrap_or(0.0)
    }

    /// Horner evaluation.
    pub fn eval(&self, x: f64) -> f64 {
        self.coeffs.iter().rev().fold(0.0, |acc, &c| acc * x + c)
    }

    /// Value together with the first derivative.
    pub fn eval_with_derivative(&self, x: f64) -> (f64, f64) {
        let mut p = 0.0;
        let mut dp = 0.0;
        for &c in self.coeffs.iter().rev() {
            dp = dp * x + p;
            p = p * x + c;
        }
        (p, dp)
    }

    pub fn derivative(&self) -> Self {
        Self::new(
            self.coeffs
                .iter()
                .enumerate()
                .skip(1)
                .map(|(k, &c)| c * k as f64)
                .collect(),
        )
    }

    /// The `k`-th derivative.
    pub fn nth_derivative(&self, k: usize) -> Self {
        (0..k).fold(self.clone(), |p, _| p.derivative())
    }

    pub fn scale(&self, s: f64) -> Self {
        Self::new(self.coeffs.iter().map(|c| c * s).collect())
    }

    /// `p(a + b x)` as a polynomial in `x`.
    pub fn compose_linear(&self, a: f64, b: f64) -> Self {
        let lin = Self::new(vec![a, b]);
        self.coeffs
            .iter()
            .rev()
            .fold(Self::zero(), |acc, &c| acc * lin.clone() + Self::constant(c))
    }

    /// Largest absolute coefficient, used to scale residual tests.
    pub fn max_abs_coeff(&self) -> f64 {
        self.coeffs.iter().fold(0.0, |m, c| m.max(c.abs()))
    }

    fn combine(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Self {
        let n = self.coeffs.len().max(other.coeffs.len());
        let get = |v: &[f64], i: usize| v.get(i).copied().unwrap_or(0.0);
        Self::new((0..n).map(|i| f(get(&self.coeffs, i), get(&other.coeffs, i))).collect())
    }
}

impl fmt::Debug for Polynomial {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Polynomial{:?}", self.coeffs)
    }
}

impl Add for Polynomial {
    type Output = Polynomial;
    fn add(self, rhs: Polynomial) -> Polynomial {
        self.combine(&rhs, |a, b| a + b)
    }
}

impl Sub for Polynomial {
    type Output = Polynomial;
    fn sub(self, rhs: Polynomial) -> Polynomial {
        self.combine(&rhs, |a, b| a - b)
    }
}

impl Neg for Polynomial {
    type Output = Polynomial;
    fn neg(self) -> Polynomial {
        self.scale(-1.0)
    }
}

impl Mul for Polynomial {
    type Output = Polynomial;
    fn mul(self, rhs: Polynomial) -> Polynomial {
        &self * &rhs
    }
}

impl Mul for &Polynomial {
    type Output = Polynomial;
    fn mul(self, rhs: &Polynomial) -> Polynomial {
        if self.is_zero() || rhs.is_zero() {
            return Polynomial::zero();
        }
        let mut out = vec![0.0; self.coeffs.len() + rhs.coeffs.len() - 1];
        for (i, a) in self.coeffs.iter().enumerate() {
            for (j, b) in rhs.coeffs.iter().enumerate() {
                out[i + j] += a * b;
            }
        }
        Polynomial::new(out)
    }
}

/// Arithmetic selector for [`poly_arith`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ArithOp {
    Add,
    Sub,
    Mul,
}

pub fn poly_arith(p: &Polynomial, q: &Polynomial, op: ArithOp) -> Polynomial {
    match op {
        ArithOp::Add => p.clone() + q.clone(),
        ArithOp::Sub => p.clone() - q.clone(),
        ArithOp::Mul => p * q,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Multiplicity {
    Simple,
    /// Root sits on a critical point: possibly multiple.
    Suspect,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Root {
    pub value: f64,
    pub multiplicity: Multiplicity,
    pub bracket: (f64, f64),
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RootList {
    pub roots: Vec<Root>,
}

impl RootList {
    pub fn len(&self) -> usize {
        self.roots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.roots.is_empty()
    }

    pub fn values(&self) -> Vec<f64> {
        self.roots.iter().map(|r| r.value).collect()
    }
}

/// Isolates every real root of `p` in the open interval `(lo, hi)`.
pub fn isolate_real_roots(p: &Polynomial, lo: f64, hi: f64, tol: f64) -> Result<RootList> {
    if !(tol > 0.0) || !(lo < hi) {
        return Err(Error::Precondition(format!(
            "need lo < hi and tol > 0 (lo={lo}, hi={hi}, tol={tol})"
        )));
    }
    if p.is_zero() {
        return Err(Error::ZeroPolynomial);
    }
    let roots = isolate_rec(p, lo, hi, tol)?;
    if let Some(w) = roots.windows(2).find(|w| w[1].value - w[0].value < tol) {
        return Err(Error::UnresolvedCluster { at: w[0].value, tol });
    }
    Ok(RootList { roots })
}

/// Threshold below which `|p(x)|` is treated as zero, relative to the
/// magnitude of the terms summed by Horner at `x`.
fn zero_threshold(p: &Polynomial, x: f64) -> f64 {
    let ax = x.abs();
    let mag = p.coeffs.iter().rev().fold(0.0, |acc, c| acc * ax + c.abs());
    64.0 * f64::EPSILON * mag
}

fn isolate_rec(p: &Polynomial, lo: f64, hi: f64, tol: f64) -> Result<Vec<Root>> {
    let deg = match p.degree() {
        None => return Err(Error::ZeroPolynomial),
        Some(d) => d,
    };
    if deg == 0 {
        return Ok(Vec::new());
    }
    if deg == 1 {
        let r = -p.coeffs[0] / p.coeffs[1];
        return Ok(if r > lo && r < hi {
            vec![Root {
                value: r,
                multiplicity: Multiplicity::Simple,
                bracket: (r, r),
            }]
        } else {
            Vec::new()
        });
    }

    // Critical points split (lo, hi) into monotone pieces.
    let crit = isolate_rec(&p.derivative(), lo, hi, tol)?;
    let mut knots = Vec::with_capacity(crit.len() + 2);
    knots.push(lo);
    knots.extend(crit.iter().map(|r| r.value));
    knots.push(hi);

    let mut roots: Vec<Root> = Vec::new();
    for (idx, w) in knots.windows(2).enumerate() {
        let (a, b) = (w[0], w[1]);
        let fa = p.eval(a);
        let fb = p.eval(b);
        let a_is_crit = idx > 0;
        let b_is_crit = idx + 1 < knots.len() - 1;

        // A root on a critical point is a suspect multiple root.
        if a_is_crit && fa.abs() <= zero_threshold(p, a) {
            if roots.last().is_none_or(|r: &Root| (r.value - a).abs() > tol) {
                roots.push(Root {
                    value: a,
                    multiplicity: Multiplicity::Suspect,
                    bracket: (a, a),
                });
            }
            continue;
        }
        if b_is_crit && fb.abs() <= zero_threshold(p, b) {
            continue;
        }
        if fa * fb < 0.0 {
            roots.push(refine_monotone(p, a, b, fa));
        }
    }
    Ok(roots)
}

/// Safeguarded Newton/bisection on a bracket with a guaranteed sign change.
fn refine_monotone(p: &Polynomial, mut a: f64, mut b: f64, fa: f64) -> Root {
    let sa = fa.signum();
    let mut x = 0.5 * (a + b);
    for _ in 0..200 {
        let (fx, dfx) = p.eval_with_derivative(x);
        if fx == 0.0 {
            a = x;
            b = x;
            break;
        }
        if fx.signum() == sa {
            a = x;
        } else {
            b = x;
        }
        let newton = x - fx / dfx;
        x = if dfx != 0.0 && newton > a && newton < b {
            newton
        } else {
            0.5 * (a + b)
        };
        if b - a <= 4.0 * f64::EPSILON * x.abs().max(f64::MIN_POSITIVE) {
            break;
        }
        if x <= a || x >= b {
            break;
        }
    }
    let value = if a == b { a } else { x.clamp(a, b) };
    Root {
        value,
        multiplicity: Multiplicity::Simple,
        bracket: (a, b),
    }
}

/// 4×4 determinant by cofactor expansion along the first row.
pub fn det4(mat: &[[Polynomial; 4]; 4]) -> Polynomial {
    let mut det = Polynomial::zero();
    for col in 0..4 {
        let minor = minor3(mat, 0, col);
        let term = &mat[0][col] * &det3(&minor);
        det = if col % 2 == 0 { det + term } else { det - term };
    }
    det
}

fn minor3(mat: &[[Polynomial; 4]; 4], row: usize, col: usize) -> [[Polynomial; 3]; 3] {
    let mut out: [[Polynomial; 3]; 3] = Default::default();
    let mut ri = 0;
    for r in 0..4 {
        if r == row {
            continue;
        }
        let mut ci = 0;
        for c in 0..4 {
            if c == col {
                continue;
            }
            out[ri][ci] = mat[r][c].clone();
            ci += 1;
        }
        ri += 1;
    }
    out
}

fn det3(m: &[[Polynomial; 3]; 3]) -> Polynomial {
    let t0 = &m[0][0] * &(&m[1][1] * &m[2][2] - &m[1][2] * &m[2][1]);
    let t1 = &m[0][1] * &(&m[1][0] * &m[2][2] - &m[1][2] * &m[2][0]);
    let t2 = &m[0][2] * &(&m[1][0] * &m[2][1] - &m[1][1] * &m[2][0]);
    t0 - t1 + t2
}

impl Default for Polynomial {
    fn default() -> Self {
        Polynomial::zero()
    }
}

impl Sub for &Polynomial {
    type Output = Polynomial;
    fn sub(self, rhs: &Polynomial) -> Polynomial {
        self.combine(rhs, |a, b| a - b)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn difference_of_squares() {
        let p = Polynomial::new(vec![1.0, 1.0]);
        let q = Polynomial::new(vec![1.0, -1.0]);
        assert_eq!(poly_arith(&p, &q, ArithOp::Mul).coeffs(), &[1.0, 0.0, -1.0]);
    }

    #[test]
    fn adding_zero_is_identity() {
        let p = Polynomial::new(vec![3.0, -2.0, 5.0]);
        assert_eq!(poly_arith(&p, &Polynomial::zero(), ArithOp::Add), p);
        assert_eq!(poly_arith(&p, &p, ArithOp::Sub), Polynomial::zero());
    }

    #[test]
    fn horner_at_root_of_positivity_selector() {
        // 3G^2 - 10G + 3 = (3G - 1)(G - 3)
        let f = Polynomial::new(vec![3.0, -10.0, 3.0]);
        assert!(f.eval(1.0 / 3.0).abs() < 1e-15);
        assert!(f.eval(3.0).abs() < 1e-14);
    }

    #[test]
    fn degree_and_constant_term() {
        let p = Polynomial::new(vec![2.0, 0.0, 1.0, 0.0, 0.0]);
        assert_eq!(p.degree(), Some(2));
        assert_eq!(p.eval(0.0), 2.0);
        assert_eq!(Polynomial::zero().degree(), None);
    }

    #[test]
    fn compose_linear_shifts() {
        let p = Polynomial::new(vec![0.0, 0.0, 1.0]);
        let q = p.compose_linear(1.0, -2.0);
        for x in [-1.0, 0.3, 2.0] {
            assert!((q.eval(x) - (1.0 - 2.0 * x).powi(2)).abs() < 1e-14);
        }
    }

    #[test]
    fn no_real_roots() {
        let p = Polynomial::new(vec![1.0, 0.0, 1.0]);
        assert!(isolate_real_roots(&p, -10.0, 10.0, 1e-12).unwrap().is_empty());
    }

    #[test]
    fn zero_polynomial_rejected() {
        assert_eq!(
            isolate_real_roots(&Polynomial::zero(), 0.0, 1.0, 1e-9),
            Err(Error::ZeroPolynomial)
        );
    }

    #[test]
    fn double_root_flagged_suspect() {
        let p = Polynomial::from_roots(&[0.5, 0.5, 2.0]);
        let roots = isolate_real_roots(&p, 0.0, 3.0, 1e-10).unwrap();
        assert_eq!(roots.len(), 2);
        assert_eq!(roots.roots[0].multiplicity, Multiplicity::Suspect);
        assert!((roots.roots[0].value - 0.5).abs() < 1e-8);
        assert_eq!(roots.roots[1].multiplicity, Multiplicity::Simple);
    }

    #[test]
    fn endpoints_are_excluded() {
        let p = Polynomial::from_roots(&[0.0, 1.0]);
        assert!(isolate_real_roots(&p, 0.0, 1.0, 1e-12).unwrap().is_empty());
    }

    #[test]
    fn identity_determinant() {
        let one = Polynomial::constant(1.0);
        let z = Polynomial::zero();
        let m = [
            [one.clone(), z.clone(), z.clone(), z.clone()],
            [z.clone(), one.clone(), z.clone(), z.clone()],
            [z.clone(), z.clone(), one.clone(), z.clone()],
            [z.clone(), z.clone(), z.clone(), one.clone()],
        ];
        assert_eq!(det4(&m), one);
    }
}
