//! Right-hand sides for the interface ODE in physical variables, for the
//! oscillatory component `φ(s)` and for the third-order analogue, together
//! with the integrators that drive them.

mod dopri;
mod phiflow;

use std::io::Write;

use serde::{Deserialize, Serialize};

pub use dopri::{hermite, integrate, Event, FnSystem, IntegrateOptions, OdeSystem, Tolerance, Trajectory, MIN_STEP};
pub use phiflow::{CrossingMode, FlowEvent, FlowEventKind, FlowOptions, FlowResult, PhiFlow, Sample};

use crate::error::{Error, Result};
use crate::params::Sign;
use crate::polyroots::Polynomial;

pub const DEFAULT_REG_EPS: f64 = 1e-10;

/// Coefficients of `P(φ) = φ^(d) + a_{d-1} φ^(d-1) + … + a_0 φ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoeffSet {
    pub mu: f64,
    /// `a[j]` multiplies `φ^(j)`; `a.len()` is the order.
    pub a: Vec<f64>,
}

impl CoeffSet {
    pub fn order(&self) -> usize {
        self.a.len()
    }

    /// Characteristic polynomial `ρ^d + a_{d-1} ρ^{d-1} + … + a_0`.
    pub fn char_poly(&self) -> Polynomial {
        let mut c = self.a.clone();
        c.push(1.0);
        Polynomial::new(c)
    }

    /// `Σ a_j x_j`
    pub fn apply(&self, x: &[f64]) -> f64 {
        self.a.iter().zip(x).map(|(a, x)| a * x).sum()
    }
}

/// Coefficients of the fifth-order operator at envelope power `μ`.
pub fn coeffs_p5(mu: f64) -> CoeffSet {
    let m2 = mu * mu;
    let m3 = m2 * mu;
    let m4 = m3 * mu;
    CoeffSet {
        mu,
        a: vec![
            mu * (mu - 1.0) * (mu - 2.0) * (mu - 3.0) * (mu - 4.0),
            5.0 * m4 - 40.0 * m3 + 105.0 * m2 - 100.0 * mu + 24.0,
            5.0 * (mu - 2.0) * (2.0 * m2 - 8.0 * mu + 5.0),
            5.0 * (2.0 * m2 - 8.0 * mu + 7.0),
            5.0 * (mu - 2.0),
        ],
    }
}

/// Coefficients of the third-order operator of the fourth-order thin film
/// equation at envelope power `μ`.
pub fn coeffs_p3(mu: f64) -> CoeffSet {
    CoeffSet {
        mu,
        a: vec![
            mu * (mu - 1.0) * (mu - 2.0),
            3.0 * mu * mu - 6.0 * mu + 2.0,
            3.0 * (mu - 1.0),
        ],
    }
}

/// `∏_{k=0}^{d-1} (ρ + μ - k)`, expanded independently of the closed forms.
pub fn shifted_product(mu: f64, order: usize) -> Polynomial {
    (0..order).fold(Polynomial::constant(1.0), |acc, k| {
        acc * Polynomial::new(vec![mu - k as f64, 1.0])
    })
}

/// The power nonlinearity `|φ|^{α-1} φ`, optionally smoothed to
/// `(φ² + ε²)^{(α-1)/2} φ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Nonlinearity {
    pub alpha: f64,
    pub reg_eps: f64,
}

impl Nonlinearity {
    pub fn new(alpha: f64, reg_eps: f64) -> Result<Self> {
        if !(reg_eps >= 0.0) {
            return Err(Error::Precondition(format!("reg_eps must be >= 0, got {reg_eps}")));
        }
        if !(alpha > -1.0 && alpha < 1.0) {
            return Err(Error::OutOfRange(format!("alpha must lie in (-1,1), got {alpha}")));
        }
        Ok(Nonlinearity { alpha, reg_eps })
    }

    pub fn eval(&self, phi: f64) -> Result<f64> {
        if self.reg_eps > 0.0 {
            let e2 = self.reg_eps * self.reg_eps;
            return Ok((phi * phi + e2).powf(0.5 * (self.alpha - 1.0)) * phi);
        }
        if phi == 0.0 {
            return if self.alpha < 0.0 {
                Err(Error::SingularState)
            } else {
                Ok(0.0)
            };
        }
        if self.alpha == 0.0 {
            return Ok(phi.signum());
        }
        Ok(phi.abs().powf(self.alpha) * phi.signum())
    }

    /// `dN/dφ`; at `φ = 0` without smoothing this is `0` for `α = 0` and
    /// singular otherwise.
    pub fn derivative(&self, phi: f64) -> Result<f64> {
        if self.reg_eps > 0.0 {
            let e2 = self.reg_eps * self.reg_eps;
            let r = phi * phi + e2;
            return Ok(r.powf(0.5 * (self.alpha - 3.0)) * (self.alpha * phi * phi + e2));
        }
        if self.alpha == 0.0 {
            return Ok(0.0);
        }
        if phi == 0.0 {
            return Err(Error::SingularState);
        }
        Ok(self.alpha * phi.abs().powf(self.alpha - 1.0))
    }
}

/// The oscillatory-component system `P(φ) = σ N(φ)` in companion form,
/// with `σ = -λ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhiSystem {
    pub coeffs: CoeffSet,
    pub nonlin: Nonlinearity,
    pub sigma: f64,
}

impl PhiSystem {
    pub fn p5(mu: f64, alpha: f64, lambda: Sign, reg_eps: f64) -> Result<Self> {
        Ok(PhiSystem {
            coeffs: coeffs_p5(mu),
            nonlin: Nonlinearity::new(alpha, reg_eps)?,
            sigma: -lambda.value(),
        })
    }

    pub fn from_params(p: &crate::params::PowerParams, reg_eps: f64) -> Result<Self> {
        Self::p5(p.mu, p.alpha, p.lambda, reg_eps)
    }

    /// `φ''' + b₂φ'' + b₁φ' + b₀φ = σ N(φ)` with `μ = 3/n`, `α = 1 - n`.
    pub fn tfe4(n: f64, sigma: f64, reg_eps: f64) -> Result<Self> {
        if !(n > 0.0 && n < 2.0) {
            return Err(Error::OutOfRange(format!(
                "third-order analogue needs n in (0,2), got {n}"
            )));
        }
        Ok(PhiSystem {
            coeffs: coeffs_p3(3.0 / n),
            nonlin: Nonlinearity::new(1.0 - n, reg_eps)?,
            sigma,
        })
    }

    pub fn with_reg_eps(&self, reg_eps: f64) -> Self {
        let mut s = self.clone();
        s.nonlin.reg_eps = reg_eps;
        s
    }

    pub fn order(&self) -> usize {
        self.coeffs.order()
    }

    /// Equilibria `±φ₀` solving `a₀ φ₀ = σ N(φ₀)`, if any.
    pub fn equilibrium(&self) -> Option<f64> {
        let a0 = self.coeffs.a[0];
        let alpha = self.nonlin.alpha;
        let base = self.sigma / a0;
        if base > 0.0 && base.is_finite() {
            Some(base.powf(1.0 / (1.0 - alpha)))
        } else {
            None
        }
    }
}

impl OdeSystem for PhiSystem {
    fn dim(&self) -> usize {
        self.order()
    }

    fn rhs(&self, _t: f64, x: &[f64], dx: &mut [f64]) -> Result<()> {
        let d = self.order();
        dx[..d - 1].copy_from_slice(&x[1..d]);
        dx[d - 1] = -self.coeffs.apply(x) + self.sigma * self.nonlin.eval(x[0])?;
        Ok(())
    }
}

/// Derivative of `(φ, φ', φ'', φ''', φ⁗)` under `P₅(φ) = ∓N(φ)` for `λ = ±1`.
pub fn rhs_phi(state: &[f64; 5], mu: f64, alpha: f64, lambda: Sign, reg_eps: f64) -> Result<[f64; 5]> {
    let sys = PhiSystem::p5(mu, alpha, lambda, reg_eps)?;
    let mut dx = [0.0; 5];
    sys.rhs(0.0, state, &mut dx)?;
    Ok(dx)
}

/// `(f, f', f'', f''', h)` with `f⁗ = α₄ + σ h` and `h' = N(f)`; the
/// non-Lipschitz term is only ever integrated, never differentiated.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhysicalSystem {
    pub alpha4: f64,
    pub nonlin: Nonlinearity,
    pub sigma: f64,
}

impl PhysicalSystem {
    pub fn new(alpha4: f64, alpha: f64, lambda: Sign, reg_eps: f64) -> Result<Self> {
        Ok(PhysicalSystem {
            alpha4,
            nonlin: Nonlinearity::new(alpha, reg_eps)?,
            sigma: -lambda.value(),
        })
    }

    /// Initial state `(f, f', f'', f''', 0)` from derivative data `α₀..α₄`.
    pub fn initial_state(data: &[f64; 5]) -> ([f64; 5], f64) {
        ([data[0], data[1], data[2], data[3], 0.0], data[4])
    }

    /// `f⁗` reconstructed from the state.
    pub fn fourth_derivative(&self, x: &[f64]) -> f64 {
        self.alpha4 + self.sigma * x[4]
    }
}

impl OdeSystem for PhysicalSystem {
    fn dim(&self) -> usize {
        5
    }

    fn rhs(&self, _t: f64, x: &[f64], dx: &mut [f64]) -> Result<()> {
        dx[0] = x[1];
        dx[1] = x[2];
        dx[2] = x[3];
        dx[3] = self.fourth_derivative(x);
        dx[4] = self.nonlin.eval(x[0])?;
        Ok(())
    }
}

pub fn rhs_physical(state: &[f64; 5], alpha4: f64, alpha: f64, lambda: Sign, reg_eps: f64) -> Result<[f64; 5]> {
    let sys = PhysicalSystem::new(alpha4, alpha, lambda, reg_eps)?;
    let mut dx = [0.0; 5];
    sys.rhs(0.0, state, &mut dx)?;
    Ok(dx)
}

/// Integrates the physical system from two ordered data sets `f^(j)(y₀)`
/// and reports whether `f₁ > f₂` on `(y₀, y₀ + span]`.
pub fn comparison_check(
    data1: &[f64; 5],
    data2: &[f64; 5],
    alpha: f64,
    lambda: Sign,
    span: f64,
    tol: Tolerance,
) -> Result<bool> {
    let ordered = data1.iter().zip(data2).all(|(a, b)| a >= b);
    let strict = data1.iter().zip(data2).any(|(a, b)| a > b);
    if !(ordered && strict) {
        return Err(Error::Precondition(
            "data must be ordered componentwise with one strict inequality".into(),
        ));
    }
    if !(span > 0.0) {
        return Err(Error::Precondition(format!("span must be positive, got {span}")));
    }
    let opts = IntegrateOptions {
        tol,
        event_components: vec![],
        h_max: span / 200.0,
        ..Default::default()
    };
    let run = |data: &[f64; 5]| -> Result<Trajectory> {
        let (x0, a4) = PhysicalSystem::initial_state(data);
        let sys = PhysicalSystem::new(a4, alpha, lambda, 0.0)?;
        integrate(&sys, 0.0, span, &x0, &opts)
    };
    let t1 = run(data1)?;
    let t2 = run(data2)?;
    // compare on the union of both step grids, skipping the start point
    let mut grid: Vec<f64> = t1.t.iter().chain(&t2.t).copied().filter(|&y| y > 0.0).collect();
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    for y in grid {
        let f1 = t1.interpolate(y).expect("inside range")[0];
        let f2 = t2.interpolate(y).expect("inside range")[0];
        if !(f1 > f2) {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Writes samples as CSV `s_or_y, c0..c{d-1}, event_flag`, where the flag is
/// `zero`, `max`, `min` or empty.
pub fn write_trajectory_csv<W: Write>(samples: &[Sample], mut w: W) -> std::io::Result<()> {
    let d = samples.first().map(|s| s.x.len()).unwrap_or(5);
    write!(w, "s_or_y")?;
    for i in 0..d {
        write!(w, ",c{i}")?;
    }
    writeln!(w, ",event_flag")?;
    for s in samples {
        write!(w, "{}", crate::export::fmt(s.s))?;
        for v in &s.x {
            write!(w, ",{}", crate::export::fmt(*v))?;
        }
        let flag = match s.event {
            Some(FlowEventKind::Zero) => "zero",
            Some(FlowEventKind::Maximum) => "max",
            Some(FlowEventKind::Minimum) => "min",
            None => "",
        };
        writeln!(w, ",{flag}")?;
    }
    Ok(())
}
