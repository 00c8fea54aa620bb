//! Coefficient-sign intervals for nonexistence and hyperbolicity, the two
//! integral identities evaluated on computed orbits, and the radius of the
//! absorbing set.

use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::odeflow::{FlowOptions, PhiFlow, PhiSystem};
use crate::orbits::OrbitResult;
use crate::params::PowerParams;
use crate::polyroots::{isolate_real_roots, Polynomial};

/// `μ = 5/(1-α)` covers `α ∈ (-1, 1)` for `μ > 5/2`; the scan stops here.
const MU_SCAN_HI: f64 = 12.0;
const MU_ADMISSIBLE_LO: f64 = 2.5;
const ROOT_TOL: f64 = 1e-14;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IntervalKind {
    NonexistenceMinus,
    NonexistencePlus,
    Hyperbolicity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundingRoot {
    pub poly: String,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntervalReport {
    pub kind: IntervalKind,
    pub mu_interval: [f64; 2],
    pub alpha_interval: [f64; 2],
    pub lo_closed: bool,
    pub hi_closed: bool,
    pub bounding_roots: Vec<BoundingRoot>,
    /// Full set of `μ` where the sign conditions hold, before intersecting
    /// with the admissible range `μ > 5/2`.
    pub sign_set: Vec<[f64; 2]>,
}

#[derive(Serialize)]
struct IntervalJson<'a> {
    kind: IntervalKind,
    mu_lo: f64,
    mu_hi: f64,
    alpha_lo: f64,
    alpha_hi: f64,
    lo_closed: bool,
    hi_closed: bool,
    roots: &'a [BoundingRoot],
}

impl IntervalReport {
    pub fn contains_mu(&self, mu: f64) -> bool {
        let [lo, hi] = self.mu_interval;
        (mu > lo || (self.lo_closed && mu == lo)) && (mu < hi || (self.hi_closed && mu == hi))
    }

    pub fn to_json_value(&self) -> serde_json::Value {
        serde_json::to_value(IntervalJson {
            kind: self.kind,
            mu_lo: self.mu_interval[0],
            mu_hi: self.mu_interval[1],
            alpha_lo: self.alpha_interval[0],
            alpha_hi: self.alpha_interval[1],
            lo_closed: self.lo_closed,
            hi_closed: self.hi_closed,
            roots: &self.bounding_roots,
        })
        .expect("interval report serializes")
    }
}

pub fn alpha_of_mu(mu: f64) -> f64 {
    (mu - 5.0) / mu
}

/// Coefficient `a_j` of the fifth-order operator as a polynomial in `μ`.
pub fn coefficient_poly(j: usize) -> Polynomial {
    let c: &[f64] = match j {
        0 => &[0.0, 24.0, -50.0, 35.0, -10.0, 1.0],
        1 => &[24.0, -100.0, 105.0, -40.0, 5.0],
        2 => &[-50.0, 105.0, -60.0, 10.0],
        3 => &[35.0, -40.0, 10.0],
        4 => &[-10.0, 5.0],
        5 => &[1.0],
        _ => &[],
    };
    Polynomial::new(c.to_vec())
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Req {
    NonNeg,
    NonPos,
}

struct Condition {
    j: usize,
    req: Req,
}

impl Condition {
    fn holds(&self, mu: f64, at_root: bool) -> bool {
        if at_root {
            return true;
        }
        let v = coefficient_poly(self.j).eval(mu);
        match self.req {
            Req::NonNeg => v >= 0.0,
            Req::NonPos => v <= 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Endpoint {
    mu: f64,
    /// Coefficient index whose root sits here, if any.
    poly: Option<usize>,
}

/// Maximal `μ` intervals in `[lo, hi]` on which every condition holds; the
/// breakpoints are certified roots of the coefficient polynomials.
fn sign_set(conds: &[Condition], lo: f64, hi: f64) -> Result<Vec<(Endpoint, Endpoint)>> {
    let mut breaks = vec![Endpoint { mu: lo, poly: None }];
    for c in conds {
        for r in isolate_real_roots(&coefficient_poly(c.j), lo, hi, ROOT_TOL)?.values() {
            breaks.push(Endpoint { mu: r, poly: Some(c.j) });
        }
    }
    breaks.push(Endpoint { mu: hi, poly: None });
    breaks.sort_by(|a, b| a.mu.total_cmp(&b.mu));
    let mut out: Vec<(Endpoint, Endpoint)> = Vec::new();
    for w in breaks.windows(2) {
        if w[1].mu - w[0].mu <= 0.0 {
            continue;
        }
        let mid = 0.5 * (w[0].mu + w[1].mu);
        if conds.iter().all(|c| c.holds(mid, false)) {
            match out.last_mut() {
                Some(last) if last.1.mu == w[0].mu => last.1 = w[1],
                _ => out.push((w[0], w[1])),
            }
        }
    }
    Ok(out)
}

fn closed_at(conds: &[Condition], e: &Endpoint) -> bool {
    match e.poly {
        None => false,
        Some(j) => conds.iter().all(|c| c.holds(e.mu, c.j == j)),
    }
}

fn poly_name(j: usize) -> String {
    format!("a{j}")
}

fn report(kind: IntervalKind, conds: &[Condition], cut_below: Option<Endpoint>) -> Result<IntervalReport> {
    let full = sign_set(conds, 0.0, MU_SCAN_HI)?;
    let sign_set_values: Vec<[f64; 2]> = full.iter().map(|(a, b)| [a.mu, b.mu]).collect();
    let admissible = sign_set(conds, MU_ADMISSIBLE_LO, MU_SCAN_HI)?;
    let (mut lo, hi) = *admissible
        .first()
        .ok_or_else(|| Error::NoConvergence(format!("{kind:?}: sign conditions never hold for mu > 5/2")))?;
    let mut lo_closed = closed_at(conds, &lo);
    if let Some(cut) = cut_below {
        if cut.mu > lo.mu {
            lo = cut;
            lo_closed = false;
        }
    }
    let hi_closed = closed_at(conds, &hi);
    let bounding_roots = [lo, hi]
        .iter()
        .filter_map(|e| {
            e.poly.map(|j| BoundingRoot {
                poly: poly_name(j),
                value: e.mu,
            })
        })
        .collect();
    Ok(IntervalReport {
        kind,
        mu_interval: [lo.mu, hi.mu],
        alpha_interval: [alpha_of_mu(lo.mu), alpha_of_mu(hi.mu)],
        lo_closed,
        hi_closed,
        bounding_roots,
        sign_set: sign_set_values,
    })
}

fn compute_nonexistence() -> Result<(IntervalReport, IntervalReport)> {
    let minus = report(
        IntervalKind::NonexistenceMinus,
        &[
            Condition { j: 1, req: Req::NonNeg },
            Condition { j: 3, req: Req::NonPos },
        ],
        None,
    )?;
    let plus = report(
        IntervalKind::NonexistencePlus,
        &[
            Condition { j: 4, req: Req::NonNeg },
            Condition { j: 2, req: Req::NonPos },
        ],
        None,
    )?;
    Ok((minus, plus))
}

/// Intervals in `μ > 5/2` where one of the two identities forbids a
/// non-constant periodic orbit, for `λ = -1` and `λ = +1` in that order.
pub fn nonexistence_intervals() -> Result<(IntervalReport, IntervalReport)> {
    static CACHE: OnceLock<std::result::Result<(IntervalReport, IntervalReport), String>> = OnceLock::new();
    CACHE
        .get_or_init(|| compute_nonexistence().map_err(|e| e.to_string()))
        .clone()
        .map_err(Error::NoConvergence)
}

/// The `μ` range where `a₄ ≥ 0`, `a₂ ≤ 0` and `a₀ ≥ 0` hold, starting above
/// the `λ = -1` nonexistence interval since no orbit lives below it.
pub fn hyperbolicity_interval() -> Result<IntervalReport> {
    let (minus, _) = nonexistence_intervals()?;
    let cut = Endpoint {
        mu: minus.mu_interval[1],
        poly: Some(1),
    };
    report(
        IntervalKind::Hyperbolicity,
        &[
            Condition { j: 4, req: Req::NonNeg },
            Condition { j: 2, req: Req::NonPos },
            Condition { j: 0, req: Req::NonNeg },
        ],
        Some(cut),
    )
}

/// True when `μ` lies in the certified nonexistence interval for the sign
/// `σ = -λ` of the fifth-order system.
pub fn orbit_forbidden(mu: f64, sigma: f64) -> bool {
    match nonexistence_intervals() {
        Ok((minus, plus)) => {
            if sigma > 0.0 {
                minus.contains_mu(mu)
            } else {
                plus.contains_mu(mu)
            }
        }
        Err(_) => false,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IdentityResiduals {
    pub r1: f64,
    pub r2: f64,
}

/// Period integrals `∫φ², ∫φ'², ∫φ''², ∫φ'''², ∫|φ|^(α+1)` of an orbit.
pub fn orbit_integrals(orbit: &OrbitResult, sys: &PhiSystem) -> Result<[f64; 5]> {
    if sys.order() != 5 {
        return Err(Error::Precondition(
            "integral identities are set up for the fifth-order system".into(),
        ));
    }
    let mut opts = FlowOptions {
        quadrature: true,
        ..Default::default()
    };
    let scale = orbit.section_state.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    opts.tol.abs *= scale.clamp(1e-300, 1.0);
    let flow = PhiFlow::new(sys, opts)?;
    let nodes: Vec<Vec<f64>> = if orbit.nodes.is_empty() {
        vec![orbit.section_state.clone()]
    } else {
        orbit.nodes.clone()
    };
    let seg = orbit.period / nodes.len() as f64;
    let mut total = [0.0; 5];
    for (j, x) in nodes.iter().enumerate() {
        let res = flow.run(x, seg * j as f64, seg)?;
        let q = res.quad.expect("quadrature requested");
        for (t, v) in total.iter_mut().zip(q) {
            *t += v;
        }
    }
    Ok(total)
}

/// Relative residuals of the identities obtained by multiplying the
/// equation by `φ` and by `φ'` and integrating over a period.
pub fn residuals_from_integrals(a: &[f64], sigma: f64, q: &[f64; 5]) -> IdentityResiduals {
    let [i0, i1, i2, i3, ia] = *q;
    let t1 = [a[4] * i2, -a[2] * i1, a[0] * i0, -sigma * ia];
    let t2 = [i3, -a[3] * i2, a[1] * i1];
    let rel = |t: &[f64]| {
        let scale = t.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if scale == 0.0 {
            0.0
        } else {
            t.iter().sum::<f64>().abs() / scale
        }
    };
    IdentityResiduals {
        r1: rel(&t1),
        r2: rel(&t2),
    }
}

pub fn identity_residuals(orbit: &OrbitResult, p: &PowerParams) -> Result<IdentityResiduals> {
    if p.alpha <= -1.0 {
        return Err(Error::Precondition("identities need alpha > -1".into()));
    }
    let sys = PhiSystem::from_params(p, 0.0)?;
    let q = orbit_integrals(orbit, &sys)?;
    Ok(residuals_from_integrals(&sys.coeffs.a, sys.sigma, &q))
}

/// Relative residual of the identity obtained with the multiplier `φ''`;
/// its right-hand side `∫|φ|^(α-1)(φ')²` converges only for `α > 0`, so
/// this is a diagnostic and feeds no interval logic.
pub fn epsilon_identity_residual(orbit: &OrbitResult, p: &PowerParams) -> Result<f64> {
    if p.alpha <= 0.0 {
        return Err(Error::Precondition(
            "the third identity is only meaningful for alpha > 0".into(),
        ));
    }
    let sys = PhiSystem::from_params(p, 0.0)?;
    let q = orbit_integrals(orbit, &sys)?;
    let opts = FlowOptions {
        record: true,
        ..Default::default()
    };
    let samples = crate::orbits::orbit_samples(orbit, &sys, &opts)?;
    let alpha = p.alpha;
    let integrand = |x: &[f64]| {
        if x[0] == 0.0 {
            0.0
        } else {
            x[0].abs().powf(alpha - 1.0) * x[1] * x[1]
        }
    };
    let weighted: f64 = samples
        .windows(2)
        .map(|w| 0.5 * (w[1].s - w[0].s) * (integrand(&w[0].x) + integrand(&w[1].x)))
        .sum();
    let a = &sys.coeffs.a;
    let t = [-a[4] * q[3], a[2] * q[2], -a[0] * q[1], sys.sigma * alpha * weighted];
    let scale = t.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    Ok(if scale == 0.0 {
        0.0
    } else {
        t.iter().sum::<f64>().abs() / scale
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AbsorbingBound {
    pub value: f64,
    /// False for `α < 0`, outside the range where the bound is proved.
    pub proven: bool,
}

/// Radius `(5!)^(-1/(1-α))` of the absorbing set.
pub fn absorbing_bound(alpha: f64) -> Result<AbsorbingBound> {
    if !(alpha > -1.0 && alpha < 1.0) {
        return Err(Error::OutOfRange(format!(
            "absorbing bound needs alpha in (-1, 1), got {alpha}"
        )));
    }
    Ok(AbsorbingBound {
        value: 120f64.powf(-1.0 / (1.0 - alpha)),
        proven: alpha >= 0.0,
    })
}
