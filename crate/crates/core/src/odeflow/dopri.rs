//! Dormand-Prince 5(4) stepper with cubic Hermite dense output and
//! sign-change event location.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Smallest admissible step before integration is declared singular.
pub const MIN_STEP: f64 = 1e-14;

const C: [f64; 7] = [0.0, 0.2, 0.3, 0.8, 8.0 / 9.0, 1.0, 1.0];
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [0.2, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [
        19372.0 / 6561.0,
        -25360.0 / 2187.0,
        64448.0 / 6561.0,
        -212.0 / 729.0,
        0.0,
        0.0,
    ],
    [
        9017.0 / 3168.0,
        -355.0 / 33.0,
        46732.0 / 5247.0,
        49.0 / 176.0,
        -5103.0 / 18656.0,
        0.0,
    ],
    [
        35.0 / 384.0,
        0.0,
        500.0 / 1113.0,
        125.0 / 192.0,
        -2187.0 / 6784.0,
        11.0 / 84.0,
    ],
];
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

/// Absolute and relative local error tolerance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tolerance {
    pub abs: f64,
    pub rel: f64,
}

impl Default for Tolerance {
    fn default() -> Self {
        Tolerance { abs: 1e-11, rel: 1e-11 }
    }
}

impl Tolerance {
    pub fn new(abs: f64, rel: f64) -> Result<Self> {
        if !(abs > 0.0 && rel > 0.0) {
            return Err(Error::Precondition(format!(
                "tolerances must be positive, got abs={abs}, rel={rel}"
            )));
        }
        Ok(Tolerance { abs, rel })
    }
}

/// A first-order system `x' = F(t, x)`.
pub trait OdeSystem {
    fn dim(&self) -> usize;
    fn rhs(&self, t: f64, x: &[f64], dx: &mut [f64]) -> Result<()>;
}

/// Adapts a closure to [`OdeSystem`].
pub struct FnSystem<F> {
    pub dim: usize,
    pub f: F,
}

impl<F> OdeSystem for FnSystem<F>
where
    F: Fn(f64, &[f64], &mut [f64]) -> Result<()>,
{
    fn dim(&self) -> usize {
        self.dim
    }
    fn rhs(&self, t: f64, x: &[f64], dx: &mut [f64]) -> Result<()> {
        (self.f)(t, x, dx)
    }
}

pub(crate) type Rhs<'a> = dyn Fn(f64, &[f64], &mut [f64]) -> Result<()> + 'a;

/// Scratch space for one step.
pub(crate) struct Stepper {
    k: [Vec<f64>; 7],
    tmp: Vec<f64>,
    pub x_new: Vec<f64>,
    pub err: Vec<f64>,
}

impl Stepper {
    pub fn new(dim: usize) -> Self {
        Stepper {
            k: std::array::from_fn(|_| vec![0.0; dim]),
            tmp: vec![0.0; dim],
            x_new: vec![0.0; dim],
            err: vec![0.0; dim],
        }
    }

    /// Derivative at the end of the last step (first-same-as-last stage).
    pub fn k_last(&self) -> &[f64] {
        &self.k[6]
    }

    /// One step of size `h` from `(t, x)` with `k1 = F(t, x)` supplied.
    /// Leaves the result in `x_new`, the embedded error in `err`, and
    /// `F(t+h, x_new)` in [`Stepper::k_last`].
    pub fn step(&mut self, f: &Rhs<'_>, t: f64, x: &[f64], k1: &[f64], h: f64) -> Result<()> {
        let n = x.len();
        self.k[0].copy_from_slice(k1);
        for s in 1..7 {
            for i in 0..n {
                let mut acc = 0.0;
                for j in 0..s {
                    acc += A[s][j] * self.k[j][i];
                }
                self.tmp[i] = x[i] + h * acc;
            }
            if s == 6 {
                self.x_new.copy_from_slice(&self.tmp);
            }
            let (head, tail) = self.k.split_at_mut(s);
            let _ = head;
            f(t + C[s] * h, &self.tmp, &mut tail[0])?;
        }
        for i in 0..n {
            let mut e = 0.0;
            for s in 0..7 {
                e += E[s] * self.k[s][i];
            }
            self.err[i] = h * e;
        }
        Ok(())
    }

    /// RMS of the embedded error scaled by the mixed tolerance.
    pub fn error_norm(&self, x: &[f64], tol: Tolerance) -> f64 {
        let n = x.len();
        let mut acc = 0.0;
        for i in 0..n {
            let sc = tol.abs + tol.rel * x[i].abs().max(self.x_new[i].abs());
            let r = self.err[i] / sc;
            acc += r * r;
        }
        let v = (acc / n as f64).sqrt();
        if v.is_finite() {
            v
        } else {
            f64::INFINITY
        }
    }
}

/// Step-size update factor after a step with scaled error `err`.
pub(crate) fn step_factor(err: f64, accepted: bool) -> f64 {
    if err == 0.0 {
        return 5.0;
    }
    let f = 0.9 * err.powf(-0.2);
    if accepted {
        f.clamp(0.2, 5.0)
    } else {
        f.clamp(0.1, 0.9)
    }
}

/// Cubic Hermite interpolation on `[t0, t0+h]` at fraction `th`.
pub fn hermite(x0: &[f64], f0: &[f64], x1: &[f64], f1: &[f64], h: f64, th: f64, out: &mut [f64]) {
    let th2 = th * th;
    let th3 = th2 * th;
    let h00 = 2.0 * th3 - 3.0 * th2 + 1.0;
    let h10 = th3 - 2.0 * th2 + th;
    let h01 = -2.0 * th3 + 3.0 * th2;
    let h11 = th3 - th2;
    for i in 0..x0.len() {
        out[i] = h00 * x0[i] + h10 * h * f0[i] + h01 * x1[i] + h11 * h * f1[i];
    }
}

/// Locates where component `comp` crosses `level` inside an accepted step:
/// first on the Hermite interpolant, then by Newton iteration on exact
/// single steps of shortened length. Returns `(tau, state)` with `tau`
/// measured from `t`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn locate_crossing(
    f: &Rhs<'_>,
    t: f64,
    x: &[f64],
    k1: &[f64],
    x1: &[f64],
    f1: &[f64],
    h: f64,
    comp: usize,
    level: f64,
) -> Result<(f64, Vec<f64>)> {
    let n = x.len();
    let mut buf = vec![0.0; n];
    let mut g = |th: f64| {
        hermite(x, k1, x1, f1, h, th, &mut buf);
        buf[comp] - level
    };
    let (mut lo, mut hi) = (0.0, 1.0);
    let (mut glo, mut ghi) = (x[comp] - level, x1[comp] - level);
    if ghi == 0.0 {
        return Ok((h, x1.to_vec()));
    }
    // Illinois regula falsi on the interpolant
    let mut side = 0i8;
    for _ in 0..100 {
        let mid = (lo * ghi - hi * glo) / (ghi - glo);
        let mid = if mid > lo && mid < hi { mid } else { 0.5 * (lo + hi) };
        let gm = g(mid);
        if gm == 0.0 || (hi - lo) < 1e-15 {
            lo = mid;
            hi = mid;
            break;
        }
        if (gm > 0.0) == (glo > 0.0) {
            lo = mid;
            glo = gm;
            if side == -1 {
                ghi *= 0.5;
            }
            side = -1;
        } else {
            hi = mid;
            ghi = gm;
            if side == 1 {
                glo *= 0.5;
            }
            side = 1;
        }
    }
    let mut tau = 0.5 * (lo + hi) * h;

    let mut st = Stepper::new(n);
    let mut d = vec![0.0; n];
    let (mut a, mut b) = (0.0, h);
    let g0 = x[comp] - level;
    for _ in 0..8 {
        st.step(f, t, x, k1, tau)?;
        let gv = st.x_new[comp] - level;
        if gv == 0.0 {
            break;
        }
        if (gv > 0.0) == (g0 > 0.0) {
            a = tau;
        } else {
            b = tau;
        }
        f(t + tau, &st.x_new, &mut d)?;
        let dg = d[comp];
        let mut next = if dg != 0.0 { tau - gv / dg } else { f64::NAN };
        if !(next > a.min(b) && next < a.max(b)) {
            next = 0.5 * (a + b);
        }
        let done = (next - tau).abs() <= 1e-13 * h.abs().max(1e-300) || (next - tau).abs() < 1e-15;
        tau = next;
        if done {
            break;
        }
    }
    st.step(f, t, x, k1, tau)?;
    Ok((tau, st.x_new.clone()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub t: f64,
    pub component: usize,
    /// `+1` for an upward crossing, `-1` for a downward one.
    pub direction: i8,
    pub state: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct IntegrateOptions {
    pub tol: Tolerance,
    pub h0: Option<f64>,
    pub h_max: f64,
    pub max_steps: usize,
    /// Components whose sign changes are logged.
    pub event_components: Vec<usize>,
}

impl Default for IntegrateOptions {
    fn default() -> Self {
        IntegrateOptions {
            tol: Tolerance::default(),
            h0: None,
            h_max: f64::INFINITY,
            max_steps: 10_000_000,
            event_components: vec![0, 1],
        }
    }
}

/// Accepted step points with derivatives, enough for Hermite dense output.
#[derive(Debug, Clone, Default)]
pub struct Trajectory {
    pub t: Vec<f64>,
    pub x: Vec<Vec<f64>>,
    pub dx: Vec<Vec<f64>>,
    pub events: Vec<Event>,
}

impl Trajectory {
    pub fn final_state(&self) -> &[f64] {
        self.x.last().expect("trajectory has at least the initial point")
    }

    /// Dense output at `t` inside the integrated range.
    pub fn interpolate(&self, t: f64) -> Option<Vec<f64>> {
        let n = self.t.len();
        if n == 0 {
            return None;
        }
        let forward = self.t[n - 1] >= self.t[0];
        let (lo, hi) = if forward {
            (self.t[0], self.t[n - 1])
        } else {
            (self.t[n - 1], self.t[0])
        };
        if t < lo || t > hi {
            return None;
        }
        if n == 1 {
            return Some(self.x[0].clone());
        }
        let i = if forward {
            self.t.partition_point(|&s| s <= t)
        } else {
            self.t.partition_point(|&s| s >= t)
        }
        .clamp(1, n - 1);
        let h = self.t[i] - self.t[i - 1];
        let th = (t - self.t[i - 1]) / h;
        let mut out = vec![0.0; self.x[0].len()];
        hermite(
            &self.x[i - 1],
            &self.dx[i - 1],
            &self.x[i],
            &self.dx[i],
            h,
            th,
            &mut out,
        );
        Some(out)
    }
}

/// Integrates `sys` from `t0` to `t1` (either direction) and logs sign
/// changes of the requested components.
pub fn integrate(sys: &dyn OdeSystem, t0: f64, t1: f64, x0: &[f64], opts: &IntegrateOptions) -> Result<Trajectory> {
    let n = sys.dim();
    if x0.len() != n {
        return Err(Error::Precondition(format!(
            "state has {} components, system has {n}",
            x0.len()
        )));
    }
    Tolerance::new(opts.tol.abs, opts.tol.rel)?;
    let f = |t: f64, x: &[f64], dx: &mut [f64]| sys.rhs(t, x, dx);
    let dir = if t1 >= t0 { 1.0 } else { -1.0 };
    let span = (t1 - t0).abs();

    let mut traj = Trajectory::default();
    let mut t = t0;
    let mut x = x0.to_vec();
    let mut k1 = vec![0.0; n];
    f(t, &x, &mut k1)?;
    traj.t.push(t);
    traj.x.push(x.clone());
    traj.dx.push(k1.clone());
    if span == 0.0 {
        return Ok(traj);
    }

    let mut h = opts
        .h0
        .unwrap_or_else(|| (1e-3 * span).min(1e-2))
        .min(opts.h_max)
        .min(span);
    let mut st = Stepper::new(n);
    let mut steps = 0usize;
    while (t1 - t) * dir > 0.0 {
        steps += 1;
        if steps > opts.max_steps {
            return Err(Error::Integration(format!(
                "step budget {} exhausted at t = {t}",
                opts.max_steps
            )));
        }
        let remaining = (t1 - t).abs();
        let last = h >= remaining;
        let hs = if last { remaining } else { h } * dir;
        st.step(&f, t, &x, &k1, hs)?;
        let err = st.error_norm(&x, opts.tol);
        if err > 1.0 {
            h *= step_factor(err, false);
            if h < MIN_STEP {
                return Err(Error::StepUnderflow { t, h });
            }
            continue;
        }
        let t_new = if last { t1 } else { t + hs };
        let k_new = st.k_last().to_vec();
        for &c in &opts.event_components {
            if c < n && x[c] != 0.0 && (st.x_new[c] == 0.0 || (st.x_new[c] > 0.0) != (x[c] > 0.0)) {
                let (tau, state) = locate_crossing(&f, t, &x, &k1, &st.x_new, &k_new, hs, c, 0.0)?;
                traj.events.push(Event {
                    t: t + tau,
                    component: c,
                    direction: if x[c] < 0.0 { 1 } else { -1 },
                    state,
                });
            }
        }
        t = t_new;
        x.copy_from_slice(&st.x_new);
        k1 = k_new;
        traj.t.push(t);
        traj.x.push(x.clone());
        traj.dx.push(k1.clone());
        h = (h * step_factor(err, true)).min(opts.h_max);
    }
    traj.events.sort_by(|a, b| (dir * a.t).total_cmp(&(dir * b.t)));
    Ok(traj)
}
