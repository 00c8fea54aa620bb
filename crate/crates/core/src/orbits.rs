//! Periodic oscillatory components: detection by relaxation, Newton
//! shooting with the monodromy matrix, Floquet multipliers, and parameter
//! continuation up to the heteroclinic bifurcation where the period blows up.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::m1exact;
use crate::odeflow::{
    CrossingMode, FlowEvent, FlowEventKind, FlowOptions, OdeSystem, PhiFlow, PhiSystem, Sample, DEFAULT_REG_EPS,
};
use crate::params::{self, PowerParams, Sign};

/// Periods above this value are read as the onset of the heteroclinic loop.
pub const PERIOD_DIVERGENCE: f64 = 50.0;
const MAX_HALVINGS: usize = 4;
const DM_INITIAL: f64 = 0.05;
const DM_FLOOR: f64 = 1e-4;
const MAX_PERIOD_JUMP: f64 = 0.3;
const M_EDGE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OrbitMethod {
    Relaxation,
    Shooting,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Multiplier {
    pub re: f64,
    pub im: f64,
}

impl Multiplier {
    pub fn modulus(&self) -> f64 {
        self.re.hypot(self.im)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrbitResult {
    /// State at a maximum of `φ` (`φ' = 0`, `φ'' < 0`).
    pub section_state: Vec<f64>,
    pub period: f64,
    /// `max |φ|` over one period.
    pub amplitude: f64,
    /// Floquet multipliers sorted by decreasing modulus.
    pub floquet: Vec<Multiplier>,
    pub converged: bool,
    pub method: OrbitMethod,
    /// `‖Φ_T(x) - x‖∞ / ‖x‖∞`
    pub residual: f64,
    pub iterations: usize,
    pub mu: f64,
    pub alpha: f64,
    pub sigma: f64,
    /// Multiple-shooting nodes, the first being the section state.
    #[serde(skip)]
    pub nodes: Vec<Vec<f64>>,
}

impl OrbitResult {
    /// Multiplier closest to 1, the one along the flow.
    pub fn trivial_multiplier_distance(&self) -> f64 {
        self.floquet
            .iter()
            .map(|m| (m.re - 1.0).hypot(m.im))
            .fold(f64::INFINITY, f64::min)
    }

    /// Largest modulus among the multipliers other than the trivial one.
    pub fn max_nontrivial_modulus(&self) -> f64 {
        let trivial = self
            .floquet
            .iter()
            .enumerate()
            .min_by(|a, b| {
                let da = (a.1.re - 1.0).hypot(a.1.im);
                let db = (b.1.re - 1.0).hypot(b.1.im);
                da.total_cmp(&db)
            })
            .map(|(i, _)| i);
        self.floquet
            .iter()
            .enumerate()
            .filter(|(i, _)| Some(*i) != trivial)
            .map(|(_, m)| m.modulus())
            .fold(0.0, f64::max)
    }

    pub fn max_multiplier_modulus(&self) -> f64 {
        self.floquet.iter().map(Multiplier::modulus).fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShootOptions {
    /// Target for the relative residual `‖Φ_T(x) - x‖∞ / ‖x‖∞`.
    pub tol: f64,
    pub max_iter: usize,
    /// Number of shooting segments per period.
    pub segments: usize,
    /// Smoothing of the nonlinearity, used only with regularized crossings.
    pub reg_eps: f64,
    pub flow: FlowOptions,
}

impl ShootOptions {
    pub fn system(&self, p: &PowerParams) -> Result<PhiSystem> {
        PhiSystem::from_params(p, self.effective_reg_eps())
    }

    fn effective_reg_eps(&self) -> f64 {
        match self.flow.mode {
            CrossingMode::Resolved => 0.0,
            CrossingMode::Regularized => self.reg_eps,
        }
    }
}

impl Default for ShootOptions {
    fn default() -> Self {
        ShootOptions {
            tol: 1e-9,
            max_iter: 30,
            segments: 1,
            reg_eps: DEFAULT_REG_EPS,
            flow: FlowOptions::default(),
        }
    }
}

/// Starting data for [`detect_shooting`].
#[derive(Debug, Clone)]
pub enum Seed<'a> {
    Orbit(&'a OrbitResult),
    /// The exact `m = 1` orbit for the given sign of `λ`.
    M1Exact(Sign),
    State {
        x: Vec<f64>,
        period: f64,
    },
}

/// Section state and period of the exact `m = 1` orbit, read off the
/// piecewise-quintic profile at a maximum of `φ*`.
pub fn m1_seed(lambda: Sign) -> Result<(Vec<f64>, f64)> {
    let ratios = m1exact::find_matching_ratios()?;
    let g = match lambda {
        Sign::Plus => ratios.g1,
        Sign::Minus => ratios.g2,
    };
    let profile = m1exact::build_profile(g, lambda, m1exact::DEFAULT_PIECES)?;
    let period = profile.period();
    let (lo, hi) = profile.s_range();
    let start = 0.5 * (lo + hi) - 0.5 * period;
    let n = 2000;
    let ds = period / n as f64;
    let d1 = |s: f64| profile.phi_star_jet(s).map(|j| j[1]);
    let mut prev = d1(start)?;
    for i in 1..=n {
        let s = start + ds * i as f64;
        let cur = d1(s)?;
        if prev > 0.0 && cur <= 0.0 {
            let (mut a, mut b) = (s - ds, s);
            for _ in 0..80 {
                let mid = 0.5 * (a + b);
                if d1(mid)? > 0.0 {
                    a = mid;
                } else {
                    b = mid;
                }
            }
            let mut x = profile.phi_star_jet(0.5 * (a + b))?.to_vec();
            x[1] = 0.0;
            return Ok((x, period));
        }
        prev = cur;
    }
    Err(Error::NoConvergence(
        "no maximum of the exact oscillatory component found".into(),
    ))
}

struct Eval {
    ends: Vec<Vec<f64>>,
    mats: Vec<DMatrix<f64>>,
    fields: Vec<Vec<f64>>,
    events: Vec<FlowEvent>,
    rel: f64,
}

fn max_abs(nodes: &[Vec<f64>]) -> f64 {
    nodes.iter().flatten().fold(0.0f64, |a, v| a.max(v.abs()))
}

fn flow_options_for(opts: &ShootOptions, x: &[f64]) -> FlowOptions {
    let scale = x.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let mut f = opts.flow;
    f.tol.abs *= scale.clamp(1e-300, 1.0);
    f.variational = true;
    f.quadrature = false;
    f.record = false;
    f
}

/// Flows every node over `t / K` and measures the mismatch with the next
/// node, cyclically.
fn evaluate(sys: &PhiSystem, flow_opts: FlowOptions, nodes: &[Vec<f64>], t: f64) -> Result<Eval> {
    let k = nodes.len();
    let flow = PhiFlow::new(sys, flow_opts)?;
    let exact = sys.with_reg_eps(0.0);
    let mut ev = Eval {
        ends: Vec::with_capacity(k),
        mats: Vec::with_capacity(k),
        fields: Vec::with_capacity(k),
        events: Vec::new(),
        rel: 0.0,
    };
    let seg = t / k as f64;
    for (j, x) in nodes.iter().enumerate() {
        let res = flow.run(x, seg * j as f64, seg)?;
        let mut field = vec![0.0; x.len()];
        let field_sys = if flow_opts.mode == CrossingMode::Resolved && res.x[0] != 0.0 {
            &exact
        } else {
            sys
        };
        field_sys.rhs(0.0, &res.x, &mut field)?;
        ev.ends.push(res.x);
        ev.mats.push(res.monodromy.expect("variational flow requested"));
        ev.fields.push(field);
        ev.events.extend(res.events);
    }
    let scale = max_abs(nodes).max(1e-300);
    ev.rel = (0..k)
        .flat_map(|j| {
            let next = &nodes[(j + 1) % k];
            ev.ends[j].iter().zip(next).map(|(e, s)| (e - s).abs())
        })
        .fold(0.0, f64::max)
        / scale;
    Ok(ev)
}

/// Splits the trajectory through `x` into `k` nodes equally spaced in `s`.
pub fn nodes_along(sys: &PhiSystem, opts: &ShootOptions, x: &[f64], t: f64, k: usize) -> Result<Vec<Vec<f64>>> {
    let mut f = flow_options_for(opts, x);
    f.variational = false;
    let flow = PhiFlow::new(sys, f)?;
    let mut nodes = vec![x.to_vec()];
    let seg = t / k as f64;
    for j in 1..k {
        let prev = nodes[j - 1].clone();
        nodes.push(flow.run(&prev, seg * (j - 1) as f64, seg)?.x);
    }
    Ok(nodes)
}

/// Number of shooting segments that keeps the growth over each segment
/// moderate for an orbit with the given largest multiplier.
pub fn segments_for(max_multiplier: f64) -> usize {
    if !(max_multiplier > 4.0) {
        return 1;
    }
    ((max_multiplier.ln() / 4f64.ln()).ceil() as usize).clamp(1, 64)
}

fn multipliers(m: &DMatrix<f64>) -> Vec<Multiplier> {
    let mut out: Vec<Multiplier> = m
        .complex_eigenvalues()
        .iter()
        .map(|c| Multiplier { re: c.re, im: c.im })
        .collect();
    out.sort_by(|a, b| b.modulus().total_cmp(&a.modulus()));
    out
}

fn amplitude_from_events(events: &[FlowEvent], nodes: &[Vec<f64>]) -> f64 {
    events
        .iter()
        .filter(|e| e.kind != FlowEventKind::Zero)
        .map(|e| e.state[0].abs())
        .chain(nodes.iter().map(|x| x[0].abs()))
        .fold(0.0, f64::max)
}

/// Non-constant orbit: the extrema seen along the flow and at the nodes
/// spread visibly.
fn is_nontrivial(events: &[FlowEvent], nodes: &[Vec<f64>]) -> bool {
    let values = events
        .iter()
        .filter(|e| e.kind != FlowEventKind::Zero)
        .map(|e| e.state[0])
        .chain(nodes.iter().map(|x| x[0]));
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    hi - lo > 1e-6 * hi.abs().max(lo.abs())
}

/// Newton iteration for `Φ_T(x) = x` with `x₁ = 0` fixed; the unknowns are
/// the remaining state components and `T`. With more than one segment the
/// period is split and the intermediate nodes become unknowns too.
pub fn shoot(sys: &PhiSystem, x_seed: &[f64], t_seed: f64, opts: &ShootOptions) -> Result<OrbitResult> {
    check_seed(sys, x_seed, t_seed)?;
    let nodes = nodes_along(sys, opts, x_seed, t_seed, opts.segments.max(1))?;
    shoot_nodes(sys, nodes, t_seed, opts)
}

fn check_seed(sys: &PhiSystem, x: &[f64], t: f64) -> Result<()> {
    let d = sys.order();
    if x.len() != d {
        return Err(Error::Precondition(format!(
            "seed has {} components, system has {d}",
            x.len()
        )));
    }
    if !(t > 0.0) {
        return Err(Error::Precondition(format!("seed period must be positive, got {t}")));
    }
    Ok(())
}

pub fn shoot_nodes(sys: &PhiSystem, mut nodes: Vec<Vec<f64>>, t_seed: f64, opts: &ShootOptions) -> Result<OrbitResult> {
    let d = sys.order();
    let k = nodes.len();
    if k == 0 {
        return Err(Error::Precondition("no shooting nodes".into()));
    }
    for x in &nodes {
        check_seed(sys, x, t_seed)?;
    }
    let dim = k * d;
    let free: Vec<usize> = (0..d).filter(|&i| i != 1).collect();
    // column of node j, component i
    let col = |j: usize, i: usize| -> Option<usize> {
        if j == 0 {
            free.iter().position(|&f| f == i)
        } else {
            Some(d - 1 + (j - 1) * d + i)
        }
    };
    nodes[0][1] = 0.0;
    let mut t = t_seed;
    let fopts = flow_options_for(opts, &nodes[0]);
    let mut ev = evaluate(sys, fopts, &nodes, t)?;
    let mut iterations = 0;
    while ev.rel >= opts.tol {
        iterations += 1;
        if iterations > opts.max_iter {
            return Err(Error::NewtonDiverged(format!(
                "residual {:.3e} after {} iterations",
                ev.rel, opts.max_iter
            )));
        }
        let mut jac = DMatrix::<f64>::zeros(dim, dim);
        let mut rhs = DVector::<f64>::zeros(dim);
        for j in 0..k {
            let next = (j + 1) % k;
            for r in 0..d {
                let row = j * d + r;
                rhs[row] = nodes[next][r] - ev.ends[j][r];
                jac[(row, dim - 1)] = ev.fields[j][r] / k as f64;
                if let Some(c) = col(next, r) {
                    jac[(row, c)] -= 1.0;
                }
                for i in 0..d {
                    if let Some(c) = col(j, i) {
                        jac[(row, c)] += ev.mats[j][(r, i)];
                    }
                }
            }
        }
        let delta = jac
            .lu()
            .solve(&rhs)
            .ok_or_else(|| Error::NewtonDiverged("singular shooting Jacobian".into()))?;
        let mut lam = 1.0;
        let mut accepted = None;
        for _ in 0..10 {
            let mut trial = nodes.clone();
            for (j, x) in trial.iter_mut().enumerate() {
                for (i, v) in x.iter_mut().enumerate() {
                    if let Some(c) = col(j, i) {
                        *v += lam * delta[c];
                    }
                }
            }
            let tt = t + lam * delta[dim - 1];
            if tt > 0.5 * t && tt < 2.0 * t {
                if let Ok(e) = evaluate(sys, fopts, &trial, tt) {
                    if e.rel < ev.rel * (1.0 - 1e-4 * lam) || e.rel < opts.tol {
                        accepted = Some((trial, tt, e));
                        break;
                    }
                }
            }
            lam *= 0.5;
        }
        match accepted {
            Some((xn, tn, en)) => {
                nodes = xn;
                t = tn;
                ev = en;
            }
            None => {
                return Err(Error::NewtonDiverged(format!(
                    "no descent along the Newton direction at residual {:.3e}",
                    ev.rel
                )))
            }
        }
    }
    let x0 = nodes[0].clone();
    if d == 5 && crate::identities::orbit_forbidden(sys.coeffs.mu, sys.sigma) {
        return Err(Error::NewtonDiverged(format!(
            "converged state at mu = {} lies in the certified nonexistence interval",
            sys.coeffs.mu
        )));
    }
    if !is_nontrivial(&ev.events, &nodes) {
        return Err(Error::NewtonDiverged("iteration collapsed onto an equilibrium".into()));
    }
    let monodromy = ev.mats.iter().skip(1).fold(ev.mats[0].clone(), |acc, m| m * acc);
    Ok(OrbitResult {
        amplitude: amplitude_from_events(&ev.events, &nodes),
        floquet: multipliers(&monodromy),
        section_state: x0,
        period: t,
        converged: true,
        method: OrbitMethod::Shooting,
        residual: ev.rel,
        iterations,
        mu: sys.coeffs.mu,
        alpha: sys.nonlin.alpha,
        sigma: sys.sigma,
        nodes,
    })
}

pub fn detect_shooting(p: &PowerParams, seed: Seed<'_>, tol: f64) -> Result<OrbitResult> {
    let opts = ShootOptions {
        tol,
        ..Default::default()
    };
    detect_shooting_with(p, seed, &opts)
}

pub fn detect_shooting_with(p: &PowerParams, seed: Seed<'_>, opts: &ShootOptions) -> Result<OrbitResult> {
    let sys = opts.system(p)?;
    match seed {
        Seed::Orbit(o) if !o.nodes.is_empty() => shoot_nodes(&sys, o.nodes.clone(), o.period, opts),
        Seed::Orbit(o) => shoot(&sys, &o.section_state, o.period, opts),
        Seed::M1Exact(l) => {
            let (x, t) = m1_seed(l)?;
            shoot(&sys, &x, t, opts)
        }
        Seed::State { x, period } => shoot(&sys, &x, period, opts),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RelaxOptions {
    /// Relative agreement required of amplitudes and gaps.
    pub tol: f64,
    pub s_max: f64,
    /// Number of consecutive agreeing comparisons.
    pub k: usize,
    pub shoot: ShootOptions,
}

impl Default for RelaxOptions {
    fn default() -> Self {
        RelaxOptions {
            tol: 1e-6,
            s_max: 5000.0,
            k: 3,
            shoot: ShootOptions::default(),
        }
    }
}

/// Generic initial data on the natural amplitude scale of the system.
pub fn generic_start(sys: &PhiSystem) -> Vec<f64> {
    let a0 = sys.coeffs.a[0].abs().max(1e-3);
    let scale = sys
        .equilibrium()
        .unwrap_or_else(|| a0.powf(-1.0 / (1.0 - sys.nonlin.alpha)));
    let mut x = vec![0.0; sys.order()];
    x[0] = 0.5 * scale;
    x[1] = -0.3 * scale;
    x
}

/// Index lag `L` and last index `i` such that the last `k` maxima agree
/// with the maxima `L` places earlier in height, spacing and swing.
fn settled(maxima: &[(f64, f64, f64)], k: usize, tol: f64) -> Option<usize> {
    for lag in 1..=4 {
        if maxima.len() < lag + k + 1 {
            continue;
        }
        let n = maxima.len();
        let ok = (0..k).all(|j| {
            let i = n - 1 - j;
            let (s, a, r) = maxima[i];
            let (s0, a0, r0) = maxima[i - lag];
            let gap = s - s0;
            let gap_prev = maxima[i - 1].0 - maxima[i - 1 - lag].0;
            (a - a0).abs() <= tol * a.abs()
                && (gap - gap_prev).abs() <= tol * gap
                && (r - r0).abs() <= tol * r.abs()
                && r > 1e-6 * a.abs()
        });
        if ok {
            return Some(lag);
        }
    }
    None
}

/// Integrates forward from generic data until the maxima repeat, then
/// polishes the orbit by one shooting solve.
pub fn relax(sys: &PhiSystem, x_start: &[f64], opts: &RelaxOptions) -> Result<OrbitResult> {
    let mut fopts = opts.shoot.flow;
    fopts.variational = false;
    fopts.quadrature = false;
    fopts.record = false;
    let scale = x_start.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    fopts.tol.abs *= scale.clamp(1e-300, 1.0);
    let flow = PhiFlow::new(sys, fopts)?;
    let chunk: f64 = 100.0;
    let mut s = 0.0;
    let mut x = x_start.to_vec();
    // (s, φ at the maximum, swing to the following minimum)
    let mut maxima: Vec<(f64, f64, f64)> = Vec::new();
    let mut last_max: Option<(f64, f64, Vec<f64>)> = None;
    let mut anchor: Option<Vec<f64>> = None;
    let eq = sys.equilibrium();
    while s < opts.s_max {
        let span = chunk.min(opts.s_max - s);
        let res = flow.run(&x, s, span)?;
        for e in &res.events {
            match e.kind {
                FlowEventKind::Maximum => {
                    last_max = Some((e.s, e.state[0], e.state.clone()));
                }
                FlowEventKind::Minimum => {
                    if let Some((sm, am, st)) = last_max.take() {
                        maxima.push((sm, am, am - e.state[0]));
                        anchor = Some(st);
                    }
                }
                FlowEventKind::Zero => {}
            }
        }
        s = res.s;
        x = res.x;
        if let Some(lag) = settled(&maxima, opts.k, opts.tol) {
            let n = maxima.len();
            let period = maxima[n - 1].0 - maxima[n - 1 - lag].0;
            let mut seed = anchor.clone().expect("anchor recorded with every maximum");
            seed[1] = 0.0;
            let mut orbit = match shoot(sys, &seed, period, &opts.shoot) {
                Ok(o) => o,
                Err(_) => OrbitResult {
                    nodes: vec![seed.clone()],
                    amplitude: maxima[n - 1 - lag..]
                        .iter()
                        .map(|m| m.1.abs().max((m.1 - m.2).abs()))
                        .fold(0.0, f64::max),
                    section_state: seed,
                    period,
                    floquet: Vec::new(),
                    converged: false,
                    method: OrbitMethod::Relaxation,
                    residual: f64::NAN,
                    iterations: 0,
                    mu: sys.coeffs.mu,
                    alpha: sys.nonlin.alpha,
                    sigma: sys.sigma,
                },
            };
            orbit.method = OrbitMethod::Relaxation;
            return Ok(orbit);
        }
        // escape to infinity along an unstable linear mode: no bounded orbit
        let size = x.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        if !(size < 1e8 * scale.max(eq.unwrap_or(0.0)).max(1e-300)) {
            break;
        }
        // resting at an equilibrium ends the search early
        let rest = x[1..].iter().all(|v| v.abs() < 1e-13 * scale.max(1e-300))
            && (x[0].abs() < 1e-13 * scale || eq.is_some_and(|e| (x[0].abs() - e).abs() < 1e-10 * e));
        if rest {
            break;
        }
    }
    Err(Error::NoSettling { s_max: opts.s_max })
}

pub fn detect_relaxation(p: &PowerParams, s_max: f64, tol: f64) -> Result<OrbitResult> {
    let opts = RelaxOptions {
        tol,
        s_max,
        ..Default::default()
    };
    detect_relaxation_with(p, &opts)
}

pub fn detect_relaxation_with(p: &PowerParams, opts: &RelaxOptions) -> Result<OrbitResult> {
    let sys = opts.shoot.system(p)?;
    relax(&sys, &generic_start(&sys), opts)
}

fn orbit_nodes(orbit: &OrbitResult) -> Vec<Vec<f64>> {
    if orbit.nodes.is_empty() {
        vec![orbit.section_state.clone()]
    } else {
        orbit.nodes.clone()
    }
}

/// Floquet multipliers of a converged orbit, recomputed from its shooting
/// nodes.
pub fn monodromy(orbit: &OrbitResult, p: &PowerParams) -> Result<Vec<Multiplier>> {
    if !orbit.converged {
        return Err(Error::Precondition("monodromy needs a converged orbit".into()));
    }
    let opts = ShootOptions::default();
    let sys = opts.system(p)?;
    let nodes = orbit_nodes(orbit);
    let fopts = flow_options_for(&opts, &orbit.section_state);
    let ev = evaluate(&sys, fopts, &nodes, orbit.period)?;
    let m = ev.mats.iter().skip(1).fold(ev.mats[0].clone(), |acc, m| m * acc);
    Ok(multipliers(&m))
}

/// One period of the orbit sampled at every accepted step, integrated
/// segment by segment from the shooting nodes.
pub fn orbit_samples(orbit: &OrbitResult, sys: &PhiSystem, opts: &FlowOptions) -> Result<Vec<Sample>> {
    let mut f = *opts;
    f.record = true;
    f.variational = false;
    let scale = orbit.section_state.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    f.tol.abs *= scale.clamp(1e-300, 1.0);
    let flow = PhiFlow::new(sys, f)?;
    let nodes = orbit_nodes(orbit);
    let seg = orbit.period / nodes.len() as f64;
    let mut out: Vec<Sample> = Vec::new();
    for (j, x) in nodes.iter().enumerate() {
        let mut samples = flow.run(x, seg * j as f64, seg)?.samples;
        if j > 0 && !samples.is_empty() {
            samples.remove(0);
        }
        out.extend(samples);
    }
    // the section state is a maximum by construction but is never detected
    // as an event, since every run starts on it
    let x = &orbit.section_state;
    if x.len() > 2 && x[1] == 0.0 && x[2] < 0.0 {
        let last = out.len().saturating_sub(1);
        for i in [0, last] {
            if let Some(s) = out.get_mut(i) {
                s.event.get_or_insert(FlowEventKind::Maximum);
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub m: f64,
    pub n: f64,
    pub lambda: Sign,
    pub period: f64,
    pub amplitude: f64,
    pub max_multiplier_modulus: f64,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BifurcationResult {
    pub n: f64,
    pub lambda: Sign,
    pub m_h: f64,
    pub bracket: [f64; 2],
    pub period_at_bracket: f64,
    pub diagnostics: String,
    pub sweep: Vec<SweepPoint>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContinuationOptions {
    pub dm_initial: f64,
    pub dm_floor: f64,
    pub dm_max: f64,
    pub period_divergence: f64,
    pub shoot: ShootOptions,
}

impl Default for ContinuationOptions {
    fn default() -> Self {
        ContinuationOptions {
            dm_initial: DM_INITIAL,
            dm_floor: DM_FLOOR,
            dm_max: 0.1,
            period_divergence: PERIOD_DIVERGENCE,
            shoot: ShootOptions::default(),
        }
    }
}

/// A point on the continuation path.
#[derive(Debug, Clone)]
struct PathPoint {
    q: f64,
    orbit: OrbitResult,
}

/// Predicts the orbit at `q` from the last one or two path points: the state
/// is rescaled by the log-secant of the amplitude and the period is
/// extrapolated linearly.
fn predict(
    make: &dyn Fn(f64) -> Result<PhiSystem>,
    path: &[PathPoint],
    q: f64,
    opts: &ShootOptions,
) -> Option<(Vec<Vec<f64>>, f64)> {
    let last = path.last().expect("path is never empty");
    let k = segments_for(last.orbit.max_multiplier_modulus());
    let mut nodes = if last.orbit.nodes.len() == k {
        last.orbit.nodes.clone()
    } else {
        let sys = make(last.q).ok()?;
        nodes_along(&sys, opts, &last.orbit.section_state, last.orbit.period, k).ok()?
    };
    let mut t = last.orbit.period;
    if path.len() >= 2 {
        let prev = &path[path.len() - 2];
        let dq_prev = last.q - prev.q;
        let r = (q - last.q) / dq_prev;
        let ratio = (last.orbit.amplitude / prev.orbit.amplitude).powf(r);
        if ratio.is_finite() && ratio > 0.0 {
            for v in nodes.iter_mut().flatten() {
                *v *= ratio;
            }
        }
        let tp = t + (t - prev.orbit.period) * r;
        if tp > 0.0 {
            t = tp;
        }
    }
    Some((nodes, t))
}

fn try_step(
    make: &dyn Fn(f64) -> Result<PhiSystem>,
    path: &[PathPoint],
    q: f64,
    opts: &ContinuationOptions,
) -> Option<OrbitResult> {
    let sys = make(q).ok()?;
    let (nodes, t) = predict(make, path, q, &opts.shoot)?;
    let orbit = shoot_nodes(&sys, nodes, t, &opts.shoot).ok()?;
    let t_last = path.last().expect("path is never empty").orbit.period;
    if (orbit.period - t_last).abs() > MAX_PERIOD_JUMP * t_last && (orbit.period - t).abs() > MAX_PERIOD_JUMP * t {
        return None;
    }
    Some(orbit)
}

/// Outcome of a continuation run in a scalar parameter `q`.
struct Continuation {
    path: Vec<PathPoint>,
    /// Smallest parameter value known to fail, if any.
    q_bad: Option<f64>,
    diverged: bool,
}

fn continue_path(
    make: &dyn Fn(f64) -> Result<PhiSystem>,
    start: PathPoint,
    q_end: f64,
    opts: &ContinuationOptions,
    stop_on_divergence: bool,
) -> Continuation {
    let dir = (q_end - start.q).signum();
    let mut path = vec![start];
    let mut dq = opts.dm_initial;
    let mut halvings = 0;
    loop {
        let q = path.last().expect("non-empty").q;
        if (q_end - q) * dir <= 0.0 {
            return Continuation {
                path,
                q_bad: None,
                diverged: false,
            };
        }
        let q_try = if (q + dir * dq - q_end) * dir > 0.0 {
            q_end
        } else {
            q + dir * dq
        };
        match try_step(make, &path, q_try, opts) {
            Some(orbit) => {
                let diverged = orbit.period > opts.period_divergence;
                path.push(PathPoint { q: q_try, orbit });
                if diverged && stop_on_divergence {
                    return Continuation {
                        path,
                        q_bad: Some(q_try + dir * dq),
                        diverged: true,
                    };
                }
                halvings = 0;
                dq = (dq * 1.5).min(opts.dm_max);
            }
            None => {
                halvings += 1;
                if halvings > MAX_HALVINGS || dq * 0.5 < opts.dm_floor {
                    return Continuation {
                        path,
                        q_bad: Some(q_try),
                        diverged: false,
                    };
                }
                dq *= 0.5;
            }
        }
    }
}

/// Continues from a known orbit at `q_lo` towards `q_hi` and brackets the
/// parameter where the orbit ceases to exist.
fn bifurcation_search(
    make: &dyn Fn(f64) -> Result<PhiSystem>,
    start: PathPoint,
    q_hi: f64,
    tol_q: f64,
    opts: &ContinuationOptions,
) -> Result<(Vec<PathPoint>, f64, f64, bool)> {
    let cont = continue_path(make, start, q_hi, opts, true);
    let mut path = cont.path;
    let Some(mut q_bad) = cont.q_bad else {
        return Err(Error::BracketInvalid(format!(
            "orbit persists up to the end of the bracket {q_hi}"
        )));
    };
    if cont.diverged {
        let q_good = path.last().expect("non-empty").q;
        return Ok((path, q_good, q_bad.min(q_hi), true));
    }
    // bisection between the last converged point and the first failure
    while (q_bad - path.last().expect("non-empty").q).abs() > tol_q {
        let q_mid = 0.5 * (q_bad + path.last().expect("non-empty").q);
        match try_step(make, &path, q_mid, opts) {
            Some(orbit) => {
                let diverged = orbit.period > opts.period_divergence;
                path.push(PathPoint { q: q_mid, orbit });
                if diverged {
                    break;
                }
            }
            None => q_bad = q_mid,
        }
    }
    let q_good = path.last().expect("non-empty").q;
    Ok((path, q_good, q_bad, false))
}

/// Orbit at the start of a bracket: relaxation for `λ = +1`, the exact
/// `m = 1` orbit continued in `m` for `λ = -1`.
fn starting_orbit(n: f64, lambda: Sign, m_lo: f64, opts: &ContinuationOptions) -> Result<PathPoint> {
    let make = |m: f64| -> Result<PhiSystem> { opts.shoot.system(&params::derive(m, n, lambda)?) };
    match lambda {
        Sign::Plus => {
            let sys = make(m_lo)?;
            let ro = RelaxOptions {
                shoot: opts.shoot,
                ..Default::default()
            };
            let orbit = relax(&sys, &generic_start(&sys), &ro)
                .map_err(|e| Error::BracketInvalid(format!("no orbit at m = {m_lo}: {e}")))?;
            if !orbit.converged {
                return Err(Error::BracketInvalid(format!(
                    "relaxation orbit at m = {m_lo} did not polish"
                )));
            }
            Ok(PathPoint { q: m_lo, orbit })
        }
        Sign::Minus => {
            let (x, t) = m1_seed(Sign::Minus)?;
            let sys = make(1.0)?;
            let orbit = shoot(&sys, &x, t, &opts.shoot)
                .map_err(|e| Error::BracketInvalid(format!("no orbit at m = 1: {e}")))?;
            let start = PathPoint { q: 1.0, orbit };
            if m_lo == 1.0 {
                return Ok(start);
            }
            let cont = continue_path(&make, start, m_lo, opts, false);
            let last = cont.path.last().expect("non-empty").clone();
            if last.q != m_lo {
                return Err(Error::BracketInvalid(format!(
                    "continuation from m = 1 stopped at m = {}",
                    last.q
                )));
            }
            Ok(last)
        }
    }
}

/// A converged orbit at `(m, n, λ)`: relaxation for `λ = +1`, the exact
/// `m = 1` orbit continued to `m` for `λ = -1`.
pub fn find_orbit(p: &PowerParams, opts: &ContinuationOptions) -> Result<OrbitResult> {
    starting_orbit(p.n, p.lambda, p.m, opts)
        .map(|pt| pt.orbit)
        .map_err(|e| match e {
            Error::BracketInvalid(msg) => Error::NewtonDiverged(msg),
            other => other,
        })
}

fn signature(path: &[PathPoint], eq: Option<f64>) -> String {
    let periods: Vec<f64> = path.iter().map(|p| p.orbit.period).collect();
    let tail = &periods[periods.len().saturating_sub(6)..];
    let monotone = tail.windows(2).all(|w| w[1] >= w[0]);
    let last = &path.last().expect("non-empty").orbit;
    let eq_text = match eq {
        Some(e) => format!("; amplitude / phi0 = {:.4}", last.amplitude / e),
        None => String::new(),
    };
    format!(
        "period along the last {} steps {}: {:?}{}",
        tail.len(),
        if monotone {
            "increases monotonically"
        } else {
            "is not monotone"
        },
        tail,
        eq_text
    )
}

/// Continues the periodic orbit in `m` at fixed `n` and locates the value
/// where it disappears.
pub fn locate_bifurcation(n: f64, lambda: Sign, bracket: [f64; 2], tol_m: f64) -> Result<BifurcationResult> {
    locate_bifurcation_with(n, lambda, bracket, tol_m, &ContinuationOptions::default())
}

pub fn locate_bifurcation_with(
    n: f64,
    lambda: Sign,
    bracket: [f64; 2],
    tol_m: f64,
    opts: &ContinuationOptions,
) -> Result<BifurcationResult> {
    let [m_lo, m_hi_requested] = bracket;
    if !(m_lo < m_hi_requested && tol_m > 0.0) {
        return Err(Error::BracketInvalid(format!(
            "need m_lo < m_hi and tol_m > 0, got {bracket:?}, {tol_m}"
        )));
    }
    params::derive(m_lo, n, lambda).map_err(|e| Error::BracketInvalid(e.to_string()))?;
    // the admissible range is open at m = n + 2; an upper end beyond it is
    // pulled back inside
    let m_hi = m_hi_requested.min(n + 2.0 - M_EDGE);
    if m_hi <= m_lo {
        return Err(Error::BracketInvalid(format!(
            "bracket {bracket:?} has no admissible part above m_lo"
        )));
    }
    let make = |m: f64| -> Result<PhiSystem> { opts.shoot.system(&params::derive(m, n, lambda)?) };
    let start = starting_orbit(n, lambda, m_lo, opts)?;
    let (path, m_good, m_bad, diverged) = bifurcation_search(&make, start, m_hi, tol_m, opts)?;
    let last = path.last().expect("non-empty");
    let eq = make(last.q).ok().and_then(|s| s.equilibrium());
    let reason = if diverged {
        format!("period exceeded {}", opts.period_divergence)
    } else {
        "shooting failed after step halving".to_string()
    };
    let sweep = path
        .iter()
        .map(|p| SweepPoint {
            m: p.q,
            n,
            lambda,
            period: p.orbit.period,
            amplitude: p.orbit.amplitude,
            max_multiplier_modulus: p.orbit.max_multiplier_modulus(),
            converged: p.orbit.converged,
        })
        .collect();
    Ok(BifurcationResult {
        n,
        lambda,
        m_h: 0.5 * (m_good + m_bad),
        bracket: [m_good, m_bad],
        period_at_bracket: last.orbit.period,
        diagnostics: format!("{reason}; {}", signature(&path, eq)),
        sweep,
    })
}

/// `n_+ = 9/(3+√3)`, where the first-order coefficient of the third-order
/// operator changes sign.
pub fn tfe4_upper_bound() -> f64 {
    9.0 / (3.0 + 3f64.sqrt())
}

/// The same continuation for the third-order operator, in the thin film
/// exponent `n` with `μ = 3/n`, `α = 1 - n` and `σ = -1`.
pub fn tfe4_bifurcation(bracket: [f64; 2], tol: f64) -> Result<BifurcationResult> {
    tfe4_bifurcation_with(bracket, tol, &ContinuationOptions::default())
}

pub fn tfe4_bifurcation_with(bracket: [f64; 2], tol: f64, opts: &ContinuationOptions) -> Result<BifurcationResult> {
    let [n_lo, n_hi] = bracket;
    if !(n_lo < n_hi && n_lo > 0.0 && n_hi < 2.0 && tol > 0.0) {
        return Err(Error::BracketInvalid(format!(
            "need 0 < n_lo < n_hi < 2, got {bracket:?}"
        )));
    }
    let make = |n: f64| PhiSystem::tfe4(n, -1.0, opts.shoot.effective_reg_eps());
    let sys = make(n_lo)?;
    let ro = RelaxOptions {
        shoot: opts.shoot,
        ..Default::default()
    };
    let orbit = relax(&sys, &generic_start(&sys), &ro)
        .map_err(|e| Error::BracketInvalid(format!("no orbit at n = {n_lo}: {e}")))?;
    if !orbit.converged {
        return Err(Error::BracketInvalid(format!(
            "relaxation orbit at n = {n_lo} did not polish"
        )));
    }
    let (path, n_good, n_bad, diverged) = bifurcation_search(&make, PathPoint { q: n_lo, orbit }, n_hi, tol, opts)?;
    let last = path.last().expect("non-empty");
    let eq = make(last.q).ok().and_then(|s| s.equilibrium());
    let reason = if diverged {
        format!("period exceeded {}", opts.period_divergence)
    } else {
        "shooting failed after step halving".to_string()
    };
    let sweep = path
        .iter()
        .map(|p| SweepPoint {
            m: p.q,
            n: p.q,
            lambda: Sign::Plus,
            period: p.orbit.period,
            amplitude: p.orbit.amplitude,
            max_multiplier_modulus: p.orbit.max_multiplier_modulus(),
            converged: p.orbit.converged,
        })
        .collect();
    Ok(BifurcationResult {
        n: 0.5 * (n_good + n_bad),
        lambda: Sign::Plus,
        m_h: 0.5 * (n_good + n_bad),
        bracket: [n_good, n_bad],
        period_at_bracket: last.orbit.period,
        diagnostics: format!("{reason}; {}", signature(&path, eq)),
        sweep,
    })
}

/// Continues an orbit in `m` from `m_from` to `m_to` and back, returning
/// the orbits at both visits of `m_from`.
pub fn round_trip(p: &PowerParams, orbit: &OrbitResult, m_to: f64) -> Result<(OrbitResult, OrbitResult)> {
    let (n, lambda) = (p.n, p.lambda);
    let make = |m: f64| -> Result<PhiSystem> { PhiSystem::from_params(&params::derive(m, n, lambda)?, 0.0) };
    let opts = ContinuationOptions::default();
    let start = PathPoint {
        q: p.m,
        orbit: orbit.clone(),
    };
    let out = continue_path(&make, start, m_to, &opts, false);
    let far = out.path.last().expect("non-empty").clone();
    if far.q != m_to {
        return Err(Error::NewtonDiverged(format!("continuation stopped at m = {}", far.q)));
    }
    let back = continue_path(&make, far, p.m, &opts, false);
    let home = back.path.last().expect("non-empty").clone();
    if home.q != p.m {
        return Err(Error::NewtonDiverged(format!(
            "return continuation stopped at m = {}",
            home.q
        )));
    }
    Ok((orbit.clone(), home.orbit))
}

pub fn write_sweep_csv<W: Write>(sweep: &[SweepPoint], mut w: W) -> std::io::Result<()> {
    use crate::export::fmt;
    writeln!(w, "m,n,lambda,period,amplitude,max_multiplier_modulus,converged")?;
    for p in sweep {
        writeln!(
            w,
            "{},{},{},{},{},{},{}",
            fmt(p.m),
            fmt(p.n),
            p.lambda,
            fmt(p.period),
            fmt(p.amplitude),
            fmt(p.max_multiplier_modulus),
            p.converged
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_seed_is_a_maximum() {
        let (x, t) = m1_seed(Sign::Plus).unwrap();
        assert_eq!(x[1], 0.0);
        assert!(x[0] > 0.0 && x[2] < 0.0);
        assert!((t - 3.4483735).abs() < 1e-6);
    }

    #[test]
    fn shooting_from_exact_seed_is_immediate() {
        let p = params::derive(1.0, 0.0, Sign::Plus).unwrap();
        let o = detect_shooting(&p, Seed::M1Exact(Sign::Plus), 1e-9).unwrap();
        assert!(o.iterations <= 2, "iterations = {}", o.iterations);
        assert!(o.trivial_multiplier_distance() < 1e-6);
    }

    #[test]
    fn settle_detection() {
        let m: Vec<(f64, f64, f64)> = (0..8).map(|i| (2.0 * i as f64, 1.0, 2.0)).collect();
        assert_eq!(settled(&m, 3, 1e-9), Some(1));
        let alt: Vec<(f64, f64, f64)> = (0..10)
            .map(|i| {
                (
                    1.5 * i as f64 + if i % 2 == 0 { 0.0 } else { 0.2 },
                    if i % 2 == 0 { 1.0 } else { 0.5 },
                    1.0,
                )
            })
            .collect();
        assert_eq!(settled(&alt, 3, 1e-9), Some(2));
        let decaying: Vec<(f64, f64, f64)> = (0..10).map(|i| (i as f64, 1.0, 0.5f64.powi(i))).collect();
        assert_eq!(settled(&decaying, 3, 1e-6), None);
    }

    #[test]
    fn sweep_csv_header() {
        let mut buf = Vec::new();
        write_sweep_csv(&[], &mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap().trim(),
            "m,n,lambda,period,amplitude,max_multiplier_modulus,converged"
        );
    }
}
