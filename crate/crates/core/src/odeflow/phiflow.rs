//! Propagation of the oscillatory-component system through sign changes
//! of `φ`.
//!
//! Away from zeros the system is integrated in `s`. When a zero is close,
//! the solver switches to the coordinate `θ` with `φ = sign(θ)|θ|^p`,
//! `p = 4/(1+α)`, and uses `θ` as the independent variable while carrying
//! `s` as a state component. With this choice `N(φ) ds/dθ = p θ³/φ'`, so the
//! vector field is smooth on each side of `θ = 0` even when `N` is
//! discontinuous (`α = 0`) or unbounded (`α < 0`). The crossing is split into
//! two legs that end and start exactly at `θ = 0`.
//!
//! The variational equations are carried along. In the `θ` chart the last
//! row `v_{d-1}` is replaced by `W = v_{d-1} - σ N(φ) v_0 / φ'`, whose
//! equation contains no derivative of `N`; converting back on exit
//! reproduces the jump of the fundamental matrix across the zero.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::dopri::{locate_crossing, step_factor, Rhs, Stepper, Tolerance, MIN_STEP};
use super::{Nonlinearity, PhiSystem};
use crate::error::{Error, Result};

/// Crossings closer than this many `s` units trigger the `θ` chart.
const ENTER_WINDOW: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CrossingMode {
    /// Exact nonlinearity with the `θ` chart at every zero.
    Resolved,
    /// Smoothed nonlinearity `(φ²+ε²)^{(α-1)/2} φ`, integrated in `s` only.
    Regularized,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlowOptions {
    pub tol: Tolerance,
    pub mode: CrossingMode,
    /// Carry the fundamental matrix.
    pub variational: bool,
    /// Carry `∫φ², ∫φ'², …, ∫|φ|^{α+1}`.
    pub quadrature: bool,
    /// Keep every accepted step in [`FlowResult::samples`].
    pub record: bool,
    pub h_max: f64,
    pub max_steps: usize,
}

impl Default for FlowOptions {
    fn default() -> Self {
        FlowOptions {
            tol: Tolerance::default(),
            mode: CrossingMode::Resolved,
            variational: false,
            quadrature: false,
            record: false,
            h_max: 0.25,
            max_steps: 50_000_000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FlowEventKind {
    Zero,
    Maximum,
    Minimum,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowEvent {
    pub s: f64,
    pub kind: FlowEventKind,
    pub state: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub s: f64,
    pub x: Vec<f64>,
    pub event: Option<FlowEventKind>,
}

#[derive(Debug, Clone)]
pub struct FlowResult {
    pub s: f64,
    pub x: Vec<f64>,
    /// `∂x(s_end)/∂x(s_0)` when requested.
    pub monodromy: Option<DMatrix<f64>>,
    pub quad: Option<Vec<f64>>,
    pub events: Vec<FlowEvent>,
    pub samples: Vec<Sample>,
    pub steps: usize,
    pub chart_visits: usize,
}

impl FlowResult {
    pub fn maxima(&self) -> impl Iterator<Item = &FlowEvent> {
        self.events.iter().filter(|e| e.kind == FlowEventKind::Maximum)
    }
}

/// Integrator for a [`PhiSystem`] honouring [`FlowOptions`].
pub struct PhiFlow<'a> {
    sys: &'a PhiSystem,
    nl: Nonlinearity,
    opts: FlowOptions,
    d: usize,
    p: f64,
}

enum ChartOutcome {
    Crossed,
    Tangential,
    Finished,
}

struct Run {
    s: f64,
    x: Vec<f64>,
    events: Vec<FlowEvent>,
    samples: Vec<Sample>,
    steps: usize,
    chart_visits: usize,
}

impl<'a> PhiFlow<'a> {
    pub fn new(sys: &'a PhiSystem, opts: FlowOptions) -> Result<Self> {
        Tolerance::new(opts.tol.abs, opts.tol.rel)?;
        let nl = match opts.mode {
            CrossingMode::Resolved => Nonlinearity {
                alpha: sys.nonlin.alpha,
                reg_eps: 0.0,
            },
            CrossingMode::Regularized => sys.nonlin,
        };
        Ok(PhiFlow {
            sys,
            nl,
            opts,
            d: sys.order(),
            p: 4.0 / (1.0 + sys.nonlin.alpha),
        })
    }

    pub fn options(&self) -> &FlowOptions {
        &self.opts
    }

    fn n_var(&self) -> usize {
        if self.opts.variational {
            self.d * self.d
        } else {
            0
        }
    }

    fn n_quad(&self) -> usize {
        if self.opts.quadrature {
            self.d
        } else {
            0
        }
    }

    fn full_dim(&self) -> usize {
        self.d + self.n_var() + self.n_quad()
    }

    fn var_at(&self, comp: usize, col: usize) -> usize {
        self.d + col * self.d + comp
    }

    fn quad_base(&self) -> usize {
        self.d + self.n_var()
    }

    /// Right-hand side in `s`.
    fn rhs_s(&self, x: &[f64], dx: &mut [f64]) -> Result<()> {
        let d = self.d;
        let a = &self.sys.coeffs.a;
        let sigma = self.sys.sigma;
        let phi = x[0];
        dx[..d - 1].copy_from_slice(&x[1..d]);
        dx[d - 1] = -self.sys.coeffs.apply(&x[..d]) + sigma * self.nl.eval(phi)?;
        if self.opts.variational {
            let np = self.nl.derivative(phi)?;
            for c in 0..d {
                let base = self.var_at(0, c);
                let v = &x[base..base + d];
                let mut top = sigma * np * v[0];
                for j in 0..d {
                    top -= a[j] * v[j];
                }
                dx[base..base + d - 1].copy_from_slice(&v[1..d]);
                dx[base + d - 1] = top;
            }
        }
        if self.opts.quadrature {
            let q = self.quad_base();
            for k in 0..d - 1 {
                dx[q + k] = x[k] * x[k];
            }
            dx[q + d - 1] = phi.abs().powf(self.nl.alpha + 1.0);
        }
        Ok(())
    }

    /// Right-hand side in `θ`; component 0 holds `s` relative to chart entry
    /// and the last variational row holds `W`.
    fn rhs_theta(&self, th: f64, z: &[f64], dz: &mut [f64]) -> Result<()> {
        let d = self.d;
        let p = self.p;
        let a = &self.sys.coeffs.a;
        let sigma = self.sys.sigma;
        let x1 = z[1];
        if x1 == 0.0 || !x1.is_finite() {
            return Err(Error::Integration("phi' vanished inside a crossing chart".into()));
        }
        let ath = th.abs();
        let x0 = th.signum() * ath.powf(p);
        let jac = p * ath.powf(p - 1.0) / x1;
        let th3 = th * th * th;
        let nj = p * th3 / x1;

        dz[0] = jac;
        let mut lin = a[0] * x0;
        for j in 1..d {
            lin += a[j] * z[j];
        }
        for k in 1..d - 1 {
            dz[k] = jac * z[k + 1];
        }
        dz[d - 1] = -jac * lin + sigma * nj;

        if self.opts.variational {
            let x2 = z[2];
            for c in 0..d {
                let base = self.var_at(0, c);
                let v = &z[base..base + d];
                let w = v[d - 1];
                let jv_last = jac * w + sigma * p * th3 * v[0] / (x1 * x1);
                for k in 0..d - 2 {
                    dz[base + k] = jac * v[k + 1];
                }
                dz[base + d - 2] = jv_last;
                let mut low = 0.0;
                for j in 0..d - 1 {
                    low += a[j] * v[j];
                }
                dz[base + d - 1] =
                    -jac * low - a[d - 1] * jv_last - sigma * p * th3 * (v[1] * x1 - v[0] * x2) / (x1 * x1 * x1);
            }
        }
        if self.opts.quadrature {
            let q = self.quad_base();
            dz[q] = jac * x0 * x0;
            for k in 1..d - 1 {
                dz[q + k] = jac * z[k] * z[k];
            }
            dz[q + d - 1] = jac * x0.abs().powf(self.nl.alpha + 1.0);
        }
        Ok(())
    }

    fn to_chart(&self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
        let d = self.d;
        let th = x[0].signum() * x[0].abs().powf(1.0 / self.p);
        let mut z = x.to_vec();
        z[0] = 0.0;
        if self.opts.variational {
            let n = if x[0] == 0.0 { 0.0 } else { self.nl.eval(x[0])? };
            for c in 0..d {
                let base = self.var_at(0, c);
                z[base + d - 1] = x[base + d - 1] - self.sys.sigma * n * x[base] / x[1];
            }
        }
        Ok((th, z))
    }

    fn leave_chart(&self, s_entry: f64, th: f64, z: &[f64]) -> Result<(f64, Vec<f64>)> {
        let d = self.d;
        let x0 = th.signum() * th.abs().powf(self.p);
        let mut x = z.to_vec();
        x[0] = x0;
        if self.opts.variational {
            let n = if x0 == 0.0 { 0.0 } else { self.nl.eval(x0)? };
            for c in 0..d {
                let base = self.var_at(0, c);
                x[base + d - 1] = z[base + d - 1] + self.sys.sigma * n * z[base] / z[1];
            }
        }
        Ok((s_entry + z[0], x))
    }

    /// Integrates from `x0` at `s0` over `span`; `x0` holds the `d` state
    /// components only.
    pub fn run(&self, x0: &[f64], s0: f64, span: f64) -> Result<FlowResult> {
        if x0.len() != self.d {
            return Err(Error::Precondition(format!(
                "state has {} components, system has {}",
                x0.len(),
                self.d
            )));
        }
        if !(span >= 0.0) {
            return Err(Error::Precondition(format!("span must be non-negative, got {span}")));
        }
        if x0.iter().any(|v| !v.is_finite()) {
            return Err(Error::Precondition("non-finite initial state".into()));
        }
        let mut x = vec![0.0; self.full_dim()];
        x[..self.d].copy_from_slice(x0);
        if self.opts.variational {
            for c in 0..self.d {
                let idx = self.var_at(c, c);
                x[idx] = 1.0;
            }
        }
        let mut run = Run {
            s: s0,
            x,
            events: Vec::new(),
            samples: Vec::new(),
            steps: 0,
            chart_visits: 0,
        };
        let s_end = s0 + span;
        if self.opts.record {
            self.push_sample(&mut run, None);
        }
        self.drive(&mut run, s_end)?;

        let d = self.d;
        let monodromy = self
            .opts
            .variational
            .then(|| DMatrix::from_fn(d, d, |i, j| run.x[self.var_at(i, j)]));
        let quad = self
            .opts
            .quadrature
            .then(|| run.x[self.quad_base()..self.quad_base() + d].to_vec());
        Ok(FlowResult {
            s: run.s,
            x: run.x[..d].to_vec(),
            monodromy,
            quad,
            events: run.events,
            samples: run.samples,
            steps: run.steps,
            chart_visits: run.chart_visits,
        })
    }

    fn push_sample(&self, run: &mut Run, event: Option<FlowEventKind>) {
        run.samples.push(Sample {
            s: run.s,
            x: run.x[..self.d].to_vec(),
            event,
        });
    }

    fn push_event(&self, run: &mut Run, s: f64, state: &[f64], kind: FlowEventKind) {
        run.events.push(FlowEvent {
            s,
            kind,
            state: state[..self.d].to_vec(),
        });
        if self.opts.record {
            run.samples.push(Sample {
                s,
                x: state[..self.d].to_vec(),
                event: Some(kind),
            });
        }
    }

    fn drive(&self, run: &mut Run, s_end: f64) -> Result<()> {
        let n = self.full_dim();
        let resolved = self.opts.mode == CrossingMode::Resolved;
        let f_s = |_t: f64, x: &[f64], dx: &mut [f64]| self.rhs_s(x, dx);
        let f_s: &Rhs<'_> = &f_s;
        let mut st = Stepper::new(n);
        let mut k1 = vec![0.0; n];
        let mut h = self.opts.h_max.min(1e-2);
        let mut guard = false;
        let mut force = false;
        let mut need_k1 = true;

        if resolved && run.x[0] == 0.0 && run.x[1] != 0.0 {
            match self.cross_zero(run, s_end, true, h)? {
                ChartOutcome::Finished => return Ok(()),
                ChartOutcome::Crossed => {}
                ChartOutcome::Tangential => return Err(Error::Integration("could not leave the initial zero".into())),
            }
        }

        while run.s < s_end {
            if run.steps > self.opts.max_steps {
                return Err(Error::Integration(format!(
                    "step budget {} exhausted at s = {}",
                    self.opts.max_steps, run.s
                )));
            }
            let (x0, x1) = (run.x[0], run.x[1]);
            if resolved
                && x1 != 0.0
                && (force || (!guard && x0 * x1 < 0.0 && x0.abs() < 2.0 * x1.abs() * h.max(ENTER_WINDOW)))
            {
                match self.cross_zero(run, s_end, false, h)? {
                    ChartOutcome::Finished => return Ok(()),
                    ChartOutcome::Crossed => {
                        force = false;
                        need_k1 = true;
                        continue;
                    }
                    ChartOutcome::Tangential => {
                        if force {
                            return Err(Error::Integration(format!("tangential zero of phi near s = {}", run.s)));
                        }
                        guard = true;
                    }
                }
            }
            if need_k1 {
                f_s(run.s, &run.x, &mut k1)?;
                need_k1 = false;
            }
            let remaining = s_end - run.s;
            let last = h >= remaining;
            let hs = if last { remaining } else { h };
            match st.step(f_s, run.s, &run.x, &k1, hs) {
                Ok(()) => {}
                Err(Error::SingularState) if resolved => {
                    h = 0.5 * hs;
                    if h < MIN_STEP {
                        return Err(Error::StepUnderflow { t: run.s, h });
                    }
                    continue;
                }
                Err(e) => return Err(e),
            }
            run.steps += 1;
            let err = st.error_norm(&run.x, self.opts.tol);
            if err > 1.0 {
                h = hs * step_factor(err, false);
                if h < MIN_STEP {
                    return Err(Error::StepUnderflow { t: run.s, h });
                }
                continue;
            }
            let xn0 = st.x_new[0];
            let xn1 = st.x_new[1];
            let zero_crossed = x0 != 0.0 && (xn0 == 0.0 || (xn0 > 0.0) != (x0 > 0.0));
            let ext_crossed = x1 != 0.0 && (xn1 == 0.0 || (xn1 > 0.0) != (x1 > 0.0));
            if resolved && zero_crossed {
                if ext_crossed || x1 == 0.0 {
                    h = 0.5 * hs;
                    if h < MIN_STEP {
                        return Err(Error::StepUnderflow { t: run.s, h });
                    }
                } else {
                    force = true;
                }
                continue;
            }
            let k_new = st.k_last().to_vec();
            let s_new = if last { s_end } else { run.s + hs };
            let mut found: Vec<(f64, Vec<f64>, FlowEventKind)> = Vec::new();
            if zero_crossed {
                let (tau, state) = locate_crossing(f_s, run.s, &run.x, &k1, &st.x_new, &k_new, hs, 0, 0.0)?;
                found.push((run.s + tau, state, FlowEventKind::Zero));
            }
            if ext_crossed {
                let (tau, state) = locate_crossing(f_s, run.s, &run.x, &k1, &st.x_new, &k_new, hs, 1, 0.0)?;
                let kind = if x1 > 0.0 {
                    FlowEventKind::Maximum
                } else {
                    FlowEventKind::Minimum
                };
                found.push((run.s + tau, state, kind));
                guard = false;
            }
            found.sort_by(|a, b| a.0.total_cmp(&b.0));
            for (s, state, kind) in found {
                self.push_event(run, s, &state, kind);
            }
            run.s = s_new;
            run.x.copy_from_slice(&st.x_new);
            k1 = k_new;
            if self.opts.record {
                self.push_sample(run, None);
            }
            h = (hs * step_factor(err, true)).min(self.opts.h_max);
        }
        Ok(())
    }

    /// Carries the state through the nearest zero of `φ` in the `θ` chart.
    /// On success `run` holds the exit state; on a tangential approach it is
    /// left untouched.
    fn cross_zero(&self, run: &mut Run, s_end: f64, from_zero: bool, h_s: f64) -> Result<ChartOutcome> {
        let n = self.full_dim();
        let p = self.p;
        let s_entry = run.s;
        let (th_in, z_in) = self.to_chart(&run.x)?;
        let x1_in = run.x[1];
        let dir = x1_in.signum();
        let f_th = |t: f64, z: &[f64], dz: &mut [f64]| self.rhs_theta(t, z, dz);
        let f_th: &Rhs<'_> = &f_th;
        let span_s = s_end - s_entry;

        // first step in θ from the s-step size: ds = J dθ
        let target_out = if from_zero {
            (x1_in.abs() * ENTER_WINDOW).powf(1.0 / p)
        } else {
            th_in.abs()
        };
        let j_ref = p * target_out.powf(p - 1.0) / x1_in.abs();
        let mut h = (0.5 * h_s / j_ref).min(0.25 * target_out).max(1e-12 * target_out);

        let mut st = Stepper::new(n);
        let mut k1 = vec![0.0; n];
        let mut pending: Vec<Sample> = Vec::new();
        let mut steps = 0usize;

        let mut th = th_in;
        let mut z = z_in;
        let mut x1_zero = x1_in;
        if from_zero {
            pending.push(Sample {
                s: s_entry,
                x: run.x[..self.d].to_vec(),
                event: Some(FlowEventKind::Zero),
            });
        }
        let legs: &[bool] = if from_zero { &[false] } else { &[true, false] };
        for &first_leg in legs {
            let th_goal = if first_leg { 0.0 } else { dir * target_out };
            f_th(th, &z, &mut k1)?;
            loop {
                let remaining = th_goal - th;
                if remaining * dir <= 0.0 {
                    break;
                }
                let last = h >= remaining.abs();
                let hh = if last { remaining } else { dir * h };
                st.step(f_th, th, &z, &k1, hh)?;
                steps += 1;
                let err = st.error_norm(&z, self.opts.tol);
                if err > 1.0 {
                    h = hh.abs() * step_factor(err, false);
                    if h < MIN_STEP * target_out.max(1e-300) {
                        return Err(Error::StepUnderflow { t: run.s, h });
                    }
                    continue;
                }
                let k_new = st.k_last().to_vec();
                // terminal time inside the chart
                if st.x_new[0] >= span_s {
                    let (tau, state) = locate_crossing(f_th, th, &z, &k1, &st.x_new, &k_new, hh, 0, span_s)?;
                    let (_, x_out) = self.leave_chart(s_entry, th + tau, &state)?;
                    self.commit(run, pending, steps);
                    run.s = s_end;
                    run.x = x_out;
                    if self.opts.record {
                        self.push_sample(run, None);
                    }
                    return Ok(ChartOutcome::Finished);
                }
                th = if last { th_goal } else { th + hh };
                z.copy_from_slice(&st.x_new);
                k1 = k_new;
                h = (hh.abs() * step_factor(err, true)).min(target_out);
                if first_leg && z[1].abs() < 0.25 * x1_in.abs() {
                    return Ok(ChartOutcome::Tangential);
                }
                if self.opts.record && th != 0.0 {
                    let (s, x) = self.leave_chart(s_entry, th, &z)?;
                    pending.push(Sample {
                        s,
                        x: x[..self.d].to_vec(),
                        event: None,
                    });
                }
                if !first_leg && z[1].abs() < 0.5 * x1_zero.abs() {
                    break;
                }
            }
            if first_leg {
                x1_zero = z[1];
                let (s0, x0) = self.leave_chart(s_entry, 0.0, &z)?;
                pending.push(Sample {
                    s: s0,
                    x: x0,
                    event: Some(FlowEventKind::Zero),
                });
            }
        }
        let (s_out, x_out) = self.leave_chart(s_entry, th, &z)?;
        self.commit(run, pending, steps);
        run.s = s_out;
        run.x = x_out;
        run.chart_visits += 1;
        Ok(ChartOutcome::Crossed)
    }

    fn commit(&self, run: &mut Run, pending: Vec<Sample>, steps: usize) {
        run.steps += steps;
        for smp in pending {
            if smp.event == Some(FlowEventKind::Zero) {
                run.events.push(FlowEvent {
                    s: smp.s,
                    kind: FlowEventKind::Zero,
                    state: smp.x[..self.d].to_vec(),
                });
                if self.opts.record {
                    run.samples.push(Sample {
                        s: smp.s,
                        x: smp.x[..self.d].to_vec(),
                        event: smp.event,
                    });
                }
            } else if self.opts.record {
                run.samples.push(smp);
            }
        }
    }
}
