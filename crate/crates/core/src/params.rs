//! Exponent algebra for the power-law nonlinearity `(m, n, λ)`, the explicit
//! monomial solution, interface regularity classes and the inverse-function
//! fixed-point construction of the positive solution.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Sign of the travelling-wave speed after `|λ|` has been scaled out.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Sign {
    #[serde(rename = "+1")]
    Plus,
    #[serde(rename = "-1")]
    Minus,
}

impl Sign {
    pub fn value(self) -> f64 {
        match self {
            Sign::Plus => 1.0,
            Sign::Minus => -1.0,
        }
    }

    pub fn from_value(v: f64) -> Option<Sign> {
        if v == 1.0 {
            Some(Sign::Plus)
        } else if v == -1.0 {
            Some(Sign::Minus)
        } else {
            None
        }
    }

    pub fn flip(self) -> Sign {
        match self {
            Sign::Plus => Sign::Minus,
            Sign::Minus => Sign::Plus,
        }
    }
}

impl std::fmt::Display for Sign {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Sign::Plus => "+1",
            Sign::Minus => "-1",
        })
    }
}

impl std::str::FromStr for Sign {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.trim() {
            "+1" | "1" | "+" | "plus" => Ok(Sign::Plus),
            "-1" | "-" | "minus" => Ok(Sign::Minus),
            other => Err(format!("expected +1 or -1, got {other:?}")),
        }
    }
}

/// `(m, n, λ)` with every derived exponent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerParams {
    pub m: f64,
    pub n: f64,
    pub lambda: Sign,
    /// `(1 - m) / (1 + n)`
    pub alpha: f64,
    /// Envelope power `5 (n + 1) / (m + n)`.
    pub mu: f64,
    /// Source-type similarity exponent `1 / (6 + m + n)`.
    pub beta: f64,
    /// Scaling-group exponent `6 / (m + n)`.
    pub gamma_scale: f64,
    /// Mass-preserving similarity exponent from balancing the PDE,
    /// `1 / (6 + m + 6n)`; equals `beta` at `n = 0`.
    pub beta_mass: f64,
    /// Exponent `(5n + 6) / (m + n)` for which `a^γ F(y/a)` maps solutions
    /// of the profile equation to solutions; equals `gamma_scale` at `n = 0`.
    pub gamma_group: f64,
}

impl PowerParams {
    /// `μ(μ-1)(μ-2)(μ-3)(μ-4)`, the constant coefficient of the linear operator.
    pub fn falling5(&self) -> f64 {
        falling5(self.mu)
    }

    pub fn sigma(&self) -> f64 {
        -self.lambda.value()
    }
}

pub(crate) fn falling5(mu: f64) -> f64 {
    mu * (mu - 1.0) * (mu - 2.0) * (mu - 3.0) * (mu - 4.0)
}

pub fn derive(m: f64, n: f64, lambda: Sign) -> Result<PowerParams> {
    if !(m.is_finite() && n.is_finite()) {
        return Err(Error::OutOfRange(format!("non-finite exponent m={m}, n={n}")));
    }
    if n <= -1.0 {
        return Err(Error::OutOfRange(format!("need n > -1, got n={n}")));
    }
    if !(m > -n && m < n + 2.0) {
        return Err(Error::OutOfRange(format!(
            "need m in (-n, n+2) = ({}, {}), got m={m}",
            -n,
            n + 2.0
        )));
    }
    let alpha = (1.0 - m) / (1.0 + n);
    let mu = 5.0 * (n + 1.0) / (m + n);
    Ok(PowerParams {
        m,
        n,
        lambda,
        alpha,
        mu,
        beta: 1.0 / (6.0 + m + n),
        gamma_scale: 6.0 / (m + n),
        beta_mass: 1.0 / (6.0 + m + 6.0 * n),
        gamma_group: (5.0 * n + 6.0) / (m + n),
    })
}

/// Amplitude of the constant oscillatory component `φ₀`: the monomial
/// `φ₀ y^μ` for `λ = -1`, the equilibria `±φ₀` for `λ = +1`.
pub fn phi0(p: &PowerParams) -> Result<f64> {
    let prod = p.falling5();
    let base = match p.lambda {
        Sign::Minus => 1.0 / prod,
        Sign::Plus => -1.0 / prod,
    };
    if !(base > 0.0 && base.is_finite()) {
        return Err(Error::NoPositiveSolution(format!(
            "mu = {} gives bracket {base} for lambda = {}",
            p.mu, p.lambda
        )));
    }
    Ok(base.powf((p.n + 1.0) / (p.m + p.n)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CpClass {
    C4,
    C3,
    C2,
    #[serde(rename = "below")]
    Below,
}

impl CpClass {
    /// Number of continuous derivatives; `Below` counts as 1.
    pub fn order(self) -> u8 {
        match self {
            CpClass::C4 => 4,
            CpClass::C3 => 3,
            CpClass::C2 => 2,
            CpClass::Below => 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegularityClass {
    pub cp_class: CpClass,
    pub fbp_gamma: f64,
    pub fbp_valid: bool,
}

/// Interface smoothness of the Cauchy-problem solution and the exponent of
/// the free-boundary expansion `C y^3 + C1 y^γ`.
pub fn classify_regularity(m: f64, n: f64) -> RegularityClass {
    let cp_class = if m < (n + 5.0) / 4.0 {
        CpClass::C4
    } else if m < (2.0 * n + 5.0) / 3.0 {
        CpClass::C3
    } else if m < (3.0 * n + 5.0) / 2.0 {
        CpClass::C2
    } else {
        CpClass::Below
    };
    let fbp_gamma = (8.0 + 5.0 * n - 3.0 * m) / (n + 1.0);
    RegularityClass {
        cp_class,
        fbp_gamma,
        fbp_valid: fbp_gamma > 3.0,
    }
}

/// Inverse function `y(f)` of the positive solution sampled on a geometric
/// grid in `f`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PositiveSolution {
    pub f: Vec<f64>,
    pub y: Vec<f64>,
    pub iterations: usize,
    pub last_update: f64,
}

impl PositiveSolution {
    /// Sup-norm relative deviation from the explicit inverse `(f/φ₀)^{1/μ}`.
    pub fn max_rel_error_vs_explicit(&self, p: &PowerParams) -> Result<f64> {
        let phi = phi0(p)?;
        Ok(self
            .f
            .iter()
            .zip(&self.y)
            .map(|(&f, &y)| {
                let exact = (f / phi).powf(1.0 / p.mu);
                (y / exact - 1.0).abs()
            })
            .fold(0.0, f64::max))
    }
}

/// Grid and iteration controls for [`fixed_point_positive`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FixedPointOptions {
    /// Spacing of the grid in `ln f`.
    pub log_step: f64,
    /// Number of e-folds below `f_max` covered by the grid.
    pub log_span: f64,
    pub max_iter: usize,
}

impl Default for FixedPointOptions {
    fn default() -> Self {
        FixedPointOptions {
            log_step: 1e-3,
            log_span: 60.0,
            max_iter: 200,
        }
    }
}

pub fn fixed_point_positive(p: &PowerParams, f_max: f64, tol: f64) -> Result<PositiveSolution> {
    fixed_point_positive_with(p, f_max, tol, FixedPointOptions::default())
}

/// Solves for the inverse function `y(f)` of the positive solution of
/// `f^(5) = f^α` with zero interface data.
///
/// Writing `v = dy/df` and `g_k = f^(k)` as functions of `f`, the equation
/// becomes the chain `g_4 = ∫ t^α v`, `g_{k-1} = ∫ g_k v`, `v = 1/g_1`:
/// five nested integrations from the interface. The bare map scales a
/// multiplicative error `c` into `c^{-4}`, so each sweep takes the geometric
/// mean `v^{4/5} g_1^{-1/5}`, which has the same fixed point and removes the
/// scaling mode.
pub fn fixed_point_positive_with(
    p: &PowerParams,
    f_max: f64,
    tol: f64,
    opts: FixedPointOptions,
) -> Result<PositiveSolution> {
    if !(p.alpha > 0.0 && p.alpha < 1.0) {
        return Err(Error::NoConvergence(format!(
            "precondition: the inverse-function operator contracts only for alpha in (0,1); alpha = {}",
            p.alpha
        )));
    }
    if p.lambda != Sign::Minus {
        return Err(Error::Precondition(
            "positive solutions exist for lambda = -1 only".into(),
        ));
    }
    if !(f_max > 0.0 && tol > 0.0) {
        return Err(Error::Precondition("need f_max > 0 and tol > 0".into()));
    }
    let phi = phi0(p)?;
    let h = opts.log_step;
    let k = (opts.log_span / h).ceil() as usize + 1;
    let ln_max = f_max.ln();
    let f: Vec<f64> = (0..k).map(|i| (ln_max - h * (k - 1 - i) as f64).exp()).collect();

    let exponent = 1.0 / p.mu;
    let scale = exponent * phi.powf(-exponent);
    let mut v: Vec<f64> = f.iter().map(|&fi| 2.0 * scale * fi.powf(exponent - 1.0)).collect();
    let f_alpha: Vec<f64> = f.iter().map(|fi| fi.powf(p.alpha)).collect();

    let mut y = cumulative_log_trapezoid(&f, &v, h);
    let mut work = vec![0.0; k];
    for iter in 1..=opts.max_iter {
        for i in 0..k {
            work[i] = f_alpha[i] * v[i];
        }
        let mut g = cumulative_log_trapezoid(&f, &work, h);
        for _ in 0..3 {
            for i in 0..k {
                work[i] = g[i] * v[i];
            }
            g = cumulative_log_trapezoid(&f, &work, h);
        }
        for i in 0..k {
            v[i] = v[i].powf(0.8) * g[i].powf(-0.2);
        }
        let y_next = cumulative_log_trapezoid(&f, &v, h);
        let update = y_next
            .iter()
            .zip(&y)
            .map(|(a, b)| ((a - b) / a).abs())
            .fold(0.0, f64::max);
        y = y_next;
        if !update.is_finite() {
            return Err(Error::NoConvergence("iterate became non-finite".into()));
        }
        if update < tol {
            return Ok(PositiveSolution {
                f,
                y,
                iterations: iter,
                last_update: update,
            });
        }
    }
    Err(Error::NoConvergence(format!(
        "sup-norm update still above {tol:e} after {} sweeps",
        opts.max_iter
    )))
}

/// `∫_0^{f_i} g(t) dt` on an ascending geometric grid, trapezoidal in
/// `ln t`, closed at the origin by the power law fitted to the two smallest
/// nodes.
fn cumulative_log_trapezoid(f: &[f64], g: &[f64], h: f64) -> Vec<f64> {
    let w0 = g[0] * f[0];
    let w1 = g[1] * f[1];
    let slope = (w1 / w0).ln() / h;
    let tail = if slope > 0.0 { w0 / slope } else { 0.0 };
    let mut out = Vec::with_capacity(f.len());
    let mut acc = tail;
    out.push(acc);
    for i in 1..f.len() {
        acc += 0.5 * h * (g[i] * f[i] + g[i - 1] * f[i - 1]);
        out.push(acc);
    }
    out
}
