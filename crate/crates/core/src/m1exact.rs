//! Exact piecewise-quintic solutions of `f^(5) = ±120 sign f`, the `m = 1`
//! (`α = 0`) case of the interface equation.
//!
//! A single hump `f₀(y) = y(y+1)(a + by + cy² + y³)` on `(-1, 0)` is copied
//! towards the right by the scaling group, `f(y) = -G⁵ f(y/G - 1)`. Every
//! copy is `G` times narrower than the previous one, so the humps accumulate
//! at the interface `y₀ = G/(1-G)`. The matching ratio `G` is fixed by
//! requiring the first four derivatives to be continuous across the first
//! junction, which reduces to a polynomial `D(G) = 0` of degree ten.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::Sign;
use crate::polyroots::{det4, isolate_real_roots, Polynomial};

pub const JUNCTION_TOL: f64 = 1e-9;
pub const DEFAULT_PIECES: usize = 40;
const FACT5: f64 = 120.0;

/// Coefficients of the cubic bracket of the base hump.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HumpPolynomial {
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

impl HumpPolynomial {
    pub fn bracket(&self) -> Polynomial {
        Polynomial::new(vec![self.a, self.b, self.c, 1.0])
    }

    /// `f₀(y) = y (y+1) (a + by + cy² + y³)` in the global coordinate.
    pub fn base(&self) -> Polynomial {
        Polynomial::new(vec![0.0, 1.0, 1.0]) * self.bracket()
    }
}

/// Solves the last three matching equations for `(a, b, c)`.
pub fn solve_abc(g: f64) -> Result<HumpPolynomial> {
    if !(g > 0.0 && g < 1.0) {
        return Err(Error::Precondition(format!(
            "matching ratio must lie in (0,1), got {g}"
        )));
    }
    Ok(solve_abc_unchecked(g))
}

fn solve_abc_unchecked(g: f64) -> HumpPolynomial {
    let (g2, g3) = (g * g, g * g * g);
    let c = (4.0 * g - 1.0) / (1.0 + g);
    let b = (-6.0 * g2 - (1.0 - 3.0 * g2) * c) / (1.0 + g2);
    let a = (4.0 * g3 - (1.0 - 2.0 * g3) * b - 3.0 * g3 * c) / (1.0 + g3);
    HumpPolynomial { a, b, c }
}

/// Residual of the first matching equation once `(a, b, c)` solve the rest.
pub fn first_equation_residual(g: f64) -> f64 {
    let h = solve_abc_unchecked(g);
    let g4 = g.powi(4);
    (1.0 - g4) * h.a + g4 * h.b - g4 * h.c + g4
}

/// `d(G) = (1+G³)(1+G²)(1+G)`, the determinant of the reduced 3×3 system.
pub fn reduced_determinant(g: f64) -> f64 {
    (1.0 + g.powi(3)) * (1.0 + g * g) * (1.0 + g)
}

/// The augmented 4×4 matching matrix with entries polynomial in `G`.
pub fn matching_matrix() -> [[Polynomial; 4]; 4] {
    let p = |c: &[f64]| Polynomial::new(c.to_vec());
    [
        [
            p(&[1.0, 0.0, 0.0, 0.0, -1.0]),
            p(&[0.0, 0.0, 0.0, 0.0, 1.0]),
            p(&[0.0, 0.0, 0.0, 0.0, -1.0]),
            p(&[0.0, 0.0, 0.0, 0.0, -1.0]),
        ],
        [
            p(&[1.0, 0.0, 0.0, 1.0]),
            p(&[1.0, 0.0, 0.0, -2.0]),
            p(&[0.0, 0.0, 0.0, 3.0]),
            p(&[0.0, 0.0, 0.0, 4.0]),
        ],
        [
            Polynomial::zero(),
            p(&[1.0, 0.0, 1.0]),
            p(&[1.0, 0.0, -3.0]),
            p(&[0.0, 0.0, -6.0]),
        ],
        [Polynomial::zero(), Polynomial::zero(), p(&[1.0, 1.0]), p(&[-1.0, 4.0])],
    ]
}

/// `D(G)`, the determinant of [`matching_matrix`].
pub fn discriminant() -> Polynomial {
    det4(&matching_matrix())
}

/// `F(G) = 3G² - 10G + 3`; positive exactly when the base hump is positive.
pub fn positivity_selector() -> Polynomial {
    Polynomial::new(vec![3.0, -10.0, 3.0])
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchingRatios {
    /// Root with a positive base hump.
    pub g1: f64,
    /// Root with a negative base hump.
    pub g2: f64,
}

pub fn find_matching_ratios() -> Result<MatchingRatios> {
    let d = discriminant();
    let roots = isolate_real_roots(&d, 0.0, 1.0, 1e-13)?;
    if roots.len() != 2 {
        return Err(Error::RootCountMismatch {
            expected: 2,
            found: roots.len(),
        });
    }
    let sel = positivity_selector();
    let (r0, r1) = (roots.roots[0].value, roots.roots[1].value);
    match (sel.eval(r0) > 0.0, sel.eval(r1) > 0.0) {
        (true, false) => Ok(MatchingRatios { g1: r0, g2: r1 }),
        (false, true) => Ok(MatchingRatios { g1: r1, g2: r0 }),
        _ => Err(Error::RootCountMismatch {
            expected: 1,
            found: usize::from(sel.eval(r0) > 0.0) + usize::from(sel.eval(r1) > 0.0),
        }),
    }
}

/// The sign of `λ` whose equation the ratio `g` solves, decided by the sign
/// of the base hump.
pub fn lambda_for_ratio(g: f64) -> Result<Sign> {
    let h = solve_abc(g)?;
    if h.base().eval(-0.5) > 0.0 {
        Ok(Sign::Plus)
    } else {
        Ok(Sign::Minus)
    }
}

/// One polynomial piece, stored in the local chart `t ∈ [0, 1]` with
/// `y = y_left + len·t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Piece {
    pub index: usize,
    pub y_left: f64,
    pub y_right: f64,
    /// `G^index`, the exact width of the piece.
    pub len: f64,
    /// `y₀ - y_left`, kept separately so that points close to the interface
    /// are not lost to cancellation.
    pub dist_left: f64,
    pub poly: Polynomial,
}

impl Piece {
    /// `f^(j)(y)` for `j = 0..=5` at local coordinate `t`.
    pub fn derivatives_at(&self, t: f64) -> [f64; 6] {
        let mut out = [0.0; 6];
        let mut q = self.poly.clone();
        let mut scale = 1.0;
        for o in out.iter_mut() {
            *o = q.eval(t) * scale;
            q = q.derivative();
            scale /= self.len;
        }
        out
    }

    /// Sign of the piece, read at its midpoint.
    pub fn sign(&self) -> f64 {
        let v = self.poly.eval(0.5);
        if v > 0.0 {
            1.0
        } else if v < 0.0 {
            -1.0
        } else {
            0.0
        }
    }
}

/// The assembled profile on `[-1, b_{N-1}]`, with interface `y₀` on the right.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PiecewiseProfile {
    pub pieces: Vec<Piece>,
    pub g: f64,
    pub y0: f64,
    pub lambda: Sign,
    pub hump: HumpPolynomial,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProfileHeader {
    #[serde(rename = "G")]
    pub g: f64,
    pub y0: f64,
    pub lambda: Sign,
    pub n_pieces: usize,
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub period: f64,
}

/// Builds `n_pieces` copies of the base hump for the ratio `g`.
pub fn build_profile(g: f64, lambda: Sign, n_pieces: usize) -> Result<PiecewiseProfile> {
    if n_pieces == 0 {
        return Err(Error::Precondition("need at least one piece".into()));
    }
    let hump = solve_abc(g)?;
    // f₀(t - 1) for t ∈ [0, 1]
    let base_local = hump.base().compose_linear(-1.0, 1.0);
    let y0 = g / (1.0 - g);

    let mut pieces = Vec::with_capacity(n_pieces);
    let mut y_left = -1.0;
    let mut len = 1.0;
    let mut amp = 1.0;
    for k in 0..n_pieces {
        let y_right = if k == 0 { 0.0 } else { y_left + len };
        pieces.push(Piece {
            index: k,
            y_left,
            y_right,
            len,
            dist_left: len / (1.0 - g),
            poly: base_local.scale(amp),
        });
        y_left = y_right;
        len *= g;
        amp *= -g.powi(5);
    }

    let profile = PiecewiseProfile {
        pieces,
        g,
        y0,
        lambda,
        hump,
    };
    let jump = profile.max_junction_jump();
    if !(jump <= JUNCTION_TOL) {
        return Err(Error::MatchingFailure {
            jump,
            tol: JUNCTION_TOL,
        });
    }
    let expected = lambda_for_ratio(g)?;
    if expected != lambda {
        return Err(Error::Precondition(format!(
            "ratio {g} produces the lambda = {expected} profile, not lambda = {lambda}"
        )));
    }
    Ok(profile)
}

impl PiecewiseProfile {
    pub fn n_pieces(&self) -> usize {
        self.pieces.len()
    }

    /// `2 |ln G|`
    pub fn period(&self) -> f64 {
        2.0 * self.g.ln().abs()
    }

    /// Largest jump of orders `0..=4` over all junctions, each divided by the
    /// natural size `len^(5-j)` of the `j`-th derivative on the left piece.
    pub fn max_junction_jump(&self) -> f64 {
        self.junction_jumps()
            .iter()
            .flat_map(|j| j.iter().copied())
            .fold(0.0, f64::max)
    }

    pub fn junction_jumps(&self) -> Vec<[f64; 5]> {
        self.pieces
            .windows(2)
            .map(|w| {
                let left = w[0].derivatives_at(1.0);
                let right = w[1].derivatives_at(0.0);
                let mut out = [0.0; 5];
                for j in 0..5 {
                    let scale = w[0].len.powi(5 - j as i32);
                    out[j] = (left[j] - right[j]).abs() / scale;
                }
                out
            })
            .collect()
    }

    /// Largest deviation of `f^(5)` from `120 κ sign f` over the pieces,
    /// where `κ = +1` for `λ = +1` and `-1` for `λ = -1`.
    pub fn residual(&self) -> f64 {
        let kappa = self.lambda.value();
        self.pieces
            .iter()
            .map(|p| {
                let d5 = p.derivatives_at(0.5)[5];
                (d5 - FACT5 * kappa * p.sign()).abs()
            })
            .fold(0.0, f64::max)
    }

    pub fn header(&self) -> ProfileHeader {
        ProfileHeader {
            g: self.g,
            y0: self.y0,
            lambda: self.lambda,
            n_pieces: self.pieces.len(),
            a: self.hump.a,
            b: self.hump.b,
            c: self.hump.c,
            period: self.period(),
        }
    }

    /// Partial interfaces `b_k = G + … + G^k`, the right ends of the pieces.
    pub fn partial_interfaces(&self) -> Vec<f64> {
        self.pieces.iter().map(|p| p.y_right).collect()
    }

    fn piece_at(&self, y: f64) -> Option<&Piece> {
        let first = self.pieces.first()?;
        let last = self.pieces.last()?;
        if y < first.y_left || y > last.y_right {
            return None;
        }
        let idx = self.pieces.partition_point(|p| p.y_right < y);
        self.pieces.get(idx)
    }

    /// `f^(j)(y)`, `j = 0..=5`, or `None` outside the assembled pieces.
    pub fn eval_derivs(&self, y: f64) -> Option<[f64; 6]> {
        let p = self.piece_at(y)?;
        Some(p.derivatives_at((y - p.y_left) / p.len))
    }

    pub fn eval(&self, y: f64) -> Option<f64> {
        self.eval_derivs(y).map(|d| d[0])
    }

    /// Range of `s = ln(y₀ - y)` covered by the pieces.
    pub fn s_range(&self) -> (f64, f64) {
        let last = self.pieces.last().expect("profile has pieces");
        let lo = (last.dist_left - last.len).ln();
        let hi = self.pieces[0].dist_left.ln();
        (lo, hi)
    }

    fn piece_for_distance(&self, r: f64) -> Option<&Piece> {
        self.pieces
            .iter()
            .find(|p| r <= p.dist_left && r >= p.dist_left - p.len)
    }

    /// `φ*(s)` and its first four `s`-derivatives, normalised to the unit
    /// equation: `f(y) = 120 (y₀ - y)⁵ φ*(ln(y₀ - y))`.
    pub fn phi_star_jet(&self, s: f64) -> Result<[f64; 5]> {
        let r = s.exp();
        let piece = self.piece_for_distance(r).ok_or_else(|| {
            let (lo, hi) = self.s_range();
            Error::Precondition(format!("s = {s} outside the profile support [{lo}, {hi}]"))
        })?;
        // f = q(t) with t = (dist_left - r)/len; write ρ = r/len so that
        // φ* = q(dist_left/len - ρ) · ρ^{-5} · (1/len⁵) / 120.
        let rho = r / piece.len;
        let shift = piece.dist_left / piece.len;
        let q = piece.poly.compose_linear(shift, -1.0);
        let norm = 1.0 / (FACT5 * piece.len.powi(5));
        let mut out = [0.0; 5];
        for (k, o) in out.iter_mut().enumerate() {
            let mut acc = 0.0;
            for (j, &c) in q.coeffs().iter().enumerate() {
                let e = j as f64 - 5.0;
                acc += c * e.powi(k as i32) * rho.powf(e);
            }
            *o = acc * norm;
        }
        Ok(out)
    }
}

/// Samples of `φ*` on `s_grid`, normalised as in
/// [`PiecewiseProfile::phi_star_jet`].
pub fn oscillatory_component(profile: &PiecewiseProfile, s_grid: &[f64]) -> Result<Vec<f64>> {
    s_grid.iter().map(|&s| profile.phi_star_jet(s).map(|j| j[0])).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaximaRatios {
    /// Location of the absolute maximum of `|f|` on each piece.
    pub maxima: Vec<f64>,
    /// `|f(y_n)| / (y₀ - y_n)⁵`
    pub ratios: Vec<f64>,
    pub limit: f64,
    /// Largest relative deviation between successive ratios.
    pub max_rel_deviation: f64,
    /// Largest deviation of the maxima from `y₀ - G^{n-1}(y₀ - y₁)`.
    pub closed_form_residual: f64,
}

pub fn maxima_ratio_limit(profile: &PiecewiseProfile) -> Result<MaximaRatios> {
    if profile.pieces.len() < 10 {
        return Err(Error::Precondition(format!(
            "need at least 10 pieces, got {}",
            profile.pieces.len()
        )));
    }
    let mut maxima = Vec::with_capacity(profile.pieces.len());
    let mut ratios = Vec::with_capacity(profile.pieces.len());
    for p in &profile.pieces {
        if p.poly.is_zero() {
            maxima.push(p.y_left + 0.5 * p.len);
            ratios.push(0.0);
            continue;
        }
        let crit = isolate_real_roots(&p.poly.derivative(), 0.0, 1.0, 1e-14)?;
        let t = crit
            .values()
            .into_iter()
            .max_by(|a, b| p.poly.eval(*a).abs().total_cmp(&p.poly.eval(*b).abs()))
            .ok_or_else(|| Error::Precondition(format!("piece {} has no interior extremum", p.index)))?;
        maxima.push(p.y_left + p.len * t);
        let dist = p.dist_left - p.len * t;
        ratios.push(p.poly.eval(t).abs() / dist.powi(5));
    }
    let max_rel_deviation = ratios
        .windows(2)
        .map(|w| {
            if w[0] == 0.0 && w[1] == 0.0 {
                0.0
            } else {
                ((w[1] - w[0]) / w[0]).abs()
            }
        })
        .fold(0.0, f64::max);
    let y1 = maxima[0];
    let g = profile.g;
    let closed_form_residual = maxima
        .iter()
        .enumerate()
        .map(|(i, &y)| (y - (profile.y0 - g.powi(i as i32) * (profile.y0 - y1))).abs())
        .fold(0.0, f64::max);
    Ok(MaximaRatios {
        limit: *ratios.last().expect("at least ten pieces"),
        maxima,
        ratios,
        max_rel_deviation,
        closed_form_residual,
    })
}

/// Writes the pieces as CSV: `piece_index, y_left, y_right, c0..c5` with the
/// coefficients in the local chart `t ∈ [0, 1]`.
pub fn write_profile_csv<W: Write>(profile: &PiecewiseProfile, mut w: W) -> std::io::Result<()> {
    writeln!(w, "piece_index,y_left,y_right,c0,c1,c2,c3,c4,c5")?;
    for p in &profile.pieces {
        write!(
            w,
            "{},{},{}",
            p.index,
            crate::export::fmt(p.y_left),
            crate::export::fmt(p.y_right)
        )?;
        for j in 0..6 {
            let c = p.poly.coeffs().get(j).copied().unwrap_or(0.0);
            write!(w, ",{}", crate::export::fmt(c))?;
        }
        writeln!(w)?;
    }
    Ok(())
}
