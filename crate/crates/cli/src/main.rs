mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};
use tfe6_core::odeflow::{write_trajectory_csv, PhiSystem};
use tfe6_core::orbits::{self, ContinuationOptions, RelaxOptions, ShootOptions};
use tfe6_core::params::{self, Sign};
use tfe6_core::{identities, m1exact, Error};

use config::{Crossing, Format, RunConfig, Settings};
use output::Outputs;

#[derive(Debug)]
pub enum CliError {
    Core(Error),
    Io(std::io::Error),
    Config(String),
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Core(e) => write!(f, "{e}"),
            CliError::Io(e) => write!(f, "i/o error: {e}"),
            CliError::Config(msg) => write!(f, "configuration error: {msg}"),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Core(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e)
    }
}

impl CliError {
    /// 2: matching failure, 3: no orbit, 4: invalid bracket, 5: out of range.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Core(Error::MatchingFailure { .. } | Error::RootCountMismatch { .. }) => 2,
            CliError::Core(Error::NoSettling { .. } | Error::NewtonDiverged(_)) => 3,
            CliError::Core(Error::BracketInvalid(_)) => 4,
            CliError::Core(Error::OutOfRange(_)) => 5,
            _ => 1,
        }
    }
}

type CliResult<T> = Result<T, CliError>;

#[derive(Parser, Debug)]
#[command(
    name = "tfe6",
    version,
    about = "Oscillatory interface profiles of the fifth-order thin film ODE"
)]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct GlobalArgs {
    /// JSON file with any of the flags below; flags win.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    abs_tol: Option<f64>,
    #[arg(long, global = true)]
    rel_tol: Option<f64>,
    /// Smoothing of |φ|^(α-1)φ, used with `--crossing regularized`.
    #[arg(long, global = true)]
    reg_eps: Option<f64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Format of tabular outputs; summaries are always JSON.
    #[arg(long, global = true, value_enum)]
    format: Option<Format>,
    /// How zeros of φ are integrated through.
    #[arg(long, global = true, value_enum)]
    crossing: Option<Crossing>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Exact piecewise-quintic profile for m = 1.
    M1 {
        #[arg(long, allow_hyphen_values = true)]
        lambda: Option<Sign>,
        #[arg(long)]
        pieces: Option<usize>,
    },
    /// Periodic oscillatory component at (m, n, λ).
    Orbit(OrbitArgs),
    /// Continuation in m up to the heteroclinic bifurcation.
    Bifurcate {
        #[arg(long, allow_hyphen_values = true)]
        n: Option<f64>,
        #[arg(long, allow_hyphen_values = true)]
        lambda: Option<Sign>,
        /// Lower and upper end in m, e.g. `1.0,1.6`.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        bracket: Option<Vec<f64>>,
        #[arg(long)]
        tol_m: Option<f64>,
    },
    /// The same continuation for the third-order analogue, in n.
    Tfe4 {
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        bracket: Option<Vec<f64>>,
        #[arg(long)]
        tol: Option<f64>,
    },
    /// Nonexistence and hyperbolicity intervals in μ.
    Intervals,
    /// Derived exponents and regularity class.
    Params {
        #[arg(long, allow_hyphen_values = true)]
        m: Option<f64>,
        #[arg(long, allow_hyphen_values = true)]
        n: Option<f64>,
        #[arg(long, allow_hyphen_values = true)]
        lambda: Option<Sign>,
    },
    /// Fixed-point construction of the positive solution.
    Positive {
        #[arg(long, allow_hyphen_values = true)]
        m: Option<f64>,
        #[arg(long, allow_hyphen_values = true)]
        n: Option<f64>,
        #[arg(long)]
        f_max: Option<f64>,
        #[arg(long)]
        tol: Option<f64>,
    },
    /// Integral identity residuals on a computed orbit.
    Identities(OrbitArgs),
}

#[derive(Args, Debug, Clone)]
struct OrbitArgs {
    #[arg(long, allow_hyphen_values = true)]
    m: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    n: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    lambda: Option<Sign>,
    /// Relaxation horizon in s.
    #[arg(long)]
    s_max: Option<f64>,
    /// Shooting residual tolerance.
    #[arg(long)]
    tol: Option<f64>,
}

fn bracket_of(v: Option<Vec<f64>>) -> CliResult<Option<[f64; 2]>> {
    match v {
        None => Ok(None),
        Some(b) => b
            .try_into()
            .map(Some)
            .map_err(|b: Vec<f64>| CliError::Config(format!("--bracket takes two values lo,hi; got {b:?}"))),
    }
}

impl Cli {
    fn command_settings(&self) -> CliResult<(&'static str, Settings)> {
        let g = &self.global;
        let mut s = Settings {
            abs_tol: g.abs_tol,
            rel_tol: g.rel_tol,
            reg_eps: g.reg_eps,
            out: g.out.clone(),
            format: g.format,
            crossing: g.crossing,
            ..Default::default()
        };
        let name = match &self.command {
            Command::M1 { lambda, pieces } => {
                s.lambda = *lambda;
                s.pieces = *pieces;
                "m1"
            }
            Command::Orbit(a) | Command::Identities(a) => {
                s.m = a.m;
                s.n = a.n;
                s.lambda = a.lambda;
                s.s_max = a.s_max;
                s.tol = a.tol;
                if matches!(self.command, Command::Orbit(_)) {
                    "orbit"
                } else {
                    "identities"
                }
            }
            Command::Bifurcate {
                n,
                lambda,
                bracket,
                tol_m,
            } => {
                s.n = *n;
                s.lambda = *lambda;
                s.bracket = bracket_of(bracket.clone())?;
                s.tol_m = *tol_m;
                "bifurcate"
            }
            Command::Tfe4 { bracket, tol } => {
                s.bracket = bracket_of(bracket.clone())?;
                s.tol = *tol;
                "tfe4"
            }
            Command::Intervals => "intervals",
            Command::Params { m, n, lambda } => {
                s.m = *m;
                s.n = *n;
                s.lambda = *lambda;
                "params"
            }
            Command::Positive { m, n, f_max, tol } => {
                s.m = *m;
                s.n = *n;
                s.f_max = *f_max;
                s.tol = *tol;
                "positive"
            }
        };
        Ok((name, s))
    }
}

fn shoot_options(cfg: &RunConfig) -> CliResult<ShootOptions> {
    let mut o = ShootOptions {
        reg_eps: cfg.reg_eps,
        ..Default::default()
    };
    o.flow.tol = cfg.tolerance()?;
    o.flow.mode = cfg.crossing.into();
    if let Some(t) = cfg.tol {
        o.tol = t;
    }
    Ok(o)
}

fn tag(m: f64, n: f64, lambda: Sign) -> String {
    let l = match lambda {
        Sign::Plus => "plus",
        Sign::Minus => "minus",
    };
    format!("m{m}_n{n}_{l}")
}

fn run_m1(cfg: &RunConfig, out: &Outputs) -> CliResult<Value> {
    let lambda = cfg.require(cfg.lambda, "lambda")?;
    let pieces = cfg.pieces.unwrap_or(m1exact::DEFAULT_PIECES);
    let ratios = m1exact::find_matching_ratios()?;
    let g = match lambda {
        Sign::Plus => ratios.g1,
        Sign::Minus => ratios.g2,
    };
    let profile = m1exact::build_profile(g, lambda, pieces)?;
    let l = if lambda == Sign::Plus { "plus" } else { "minus" };

    let mut buf = Vec::new();
    m1exact::write_profile_csv(&profile, &mut buf)?;
    out.table(&format!("m1_profile_{l}"), &buf)?;

    let period = profile.period();
    let (lo, hi) = profile.s_range();
    // one period from the middle of the support, or all of it when shorter
    let span = period.min(hi - lo);
    let start = 0.5 * (lo + hi) - 0.5 * span;
    let grid: Vec<f64> = (0..=1000).map(|i| start + span * i as f64 / 1000.0).collect();
    let phi = m1exact::oscillatory_component(&profile, &grid)?;
    let mut buf = String::from("s,phi_star\n");
    for (s, v) in grid.iter().zip(&phi) {
        buf.push_str(&format!(
            "{},{}\n",
            tfe6_core::export::fmt(*s),
            tfe6_core::export::fmt(*v)
        ));
    }
    out.table(&format!("m1_phi_star_{l}"), buf.as_bytes())?;

    let seed_amp = orbits::m1_seed(lambda).map(|(x, _)| x[0].abs()).unwrap_or(0.0);
    let amplitude = phi.iter().fold(seed_amp, |a, v| a.max(v.abs()));
    let maxima = if pieces >= 10 {
        m1exact::maxima_ratio_limit(&profile).ok()
    } else {
        None
    };
    let header = profile.header();
    let summary = json!({
        "config": cfg,
        "G": g,
        "y0": profile.y0,
        "period": period,
        "amplitude": amplitude,
        "lambda": lambda,
        "n_pieces": profile.pieces.len(),
        "hump": {"a": header.a, "b": header.b, "c": header.c},
        "max_junction_jump": profile.max_junction_jump(),
        "maxima_ratio_limit": maxima.as_ref().map(|m| m.limit),
        "maxima_closed_form_residual": maxima.as_ref().map(|m| m.closed_form_residual),
    });
    out.json(&format!("m1_summary_{l}"), &summary)?;
    println!(
        "G = {g:.10}  y0 = {:.10}  period = {period:.10}  amplitude = {amplitude:.10e}",
        profile.y0
    );
    Ok(summary)
}

fn compute_orbit(cfg: &RunConfig) -> CliResult<(params::PowerParams, orbits::OrbitResult, ShootOptions)> {
    let m = cfg.require(cfg.m, "m")?;
    let n = cfg.require(cfg.n, "n")?;
    let lambda = cfg.require(cfg.lambda, "lambda")?;
    let p = params::derive(m, n, lambda)?;
    let shoot = shoot_options(cfg)?;
    let orbit = match lambda {
        Sign::Plus => {
            let ro = RelaxOptions {
                s_max: cfg.s_max.unwrap_or(RelaxOptions::default().s_max),
                shoot,
                ..Default::default()
            };
            let o = orbits::detect_relaxation_with(&p, &ro)?;
            if !o.converged {
                return Err(Error::NewtonDiverged("relaxation orbit did not polish".into()).into());
            }
            o
        }
        Sign::Minus => {
            let co = ContinuationOptions {
                shoot,
                ..Default::default()
            };
            orbits::find_orbit(&p, &co)?
        }
    };
    Ok((p, orbit, shoot))
}

fn run_orbit(cfg: &RunConfig, out: &Outputs) -> CliResult<Value> {
    let (p, orbit, shoot) = compute_orbit(cfg)?;
    let sys: PhiSystem = shoot.system(&p)?;
    let samples = orbits::orbit_samples(&orbit, &sys, &shoot.flow)?;
    let t = tag(p.m, p.n, p.lambda);
    let mut buf = Vec::new();
    write_trajectory_csv(&samples, &mut buf)?;
    out.table(&format!("orbit_trajectory_{t}"), &buf)?;
    let residuals = identities::identity_residuals(&orbit, &p).ok();
    let summary = json!({
        "config": cfg,
        "params": p,
        "orbit": orbit,
        "identity_residuals": residuals,
    });
    out.json(&format!("orbit_{t}"), &summary)?;
    println!(
        "period = {:.10}  amplitude = {:.10e}  residual = {:.2e}  method = {:?}",
        orbit.period, orbit.amplitude, orbit.residual, orbit.method
    );
    Ok(summary)
}

fn run_identities(cfg: &RunConfig, out: &Outputs) -> CliResult<Value> {
    let (p, orbit, _) = compute_orbit(cfg)?;
    let r = identities::identity_residuals(&orbit, &p)?;
    let eps = if p.alpha > 0.0 {
        identities::epsilon_identity_residual(&orbit, &p).ok()
    } else {
        None
    };
    let summary = json!({
        "config": cfg,
        "params": p,
        "period": orbit.period,
        "amplitude": orbit.amplitude,
        "r1": r.r1,
        "r2": r.r2,
        "epsilon_identity_residual": eps,
    });
    out.json(&format!("identities_{}", tag(p.m, p.n, p.lambda)), &summary)?;
    println!("r1 = {:.3e}  r2 = {:.3e}", r.r1, r.r2);
    Ok(summary)
}

fn continuation_options(cfg: &RunConfig) -> CliResult<ContinuationOptions> {
    let mut shoot = shoot_options(cfg)?;
    shoot.tol = ShootOptions::default().tol;
    Ok(ContinuationOptions {
        shoot,
        ..Default::default()
    })
}

fn run_bifurcate(cfg: &RunConfig, out: &Outputs) -> CliResult<Value> {
    let n = cfg.require(cfg.n, "n")?;
    let lambda = cfg.require(cfg.lambda, "lambda")?;
    let bracket = cfg.require(cfg.bracket, "bracket")?;
    let tol_m = cfg.tol_m.unwrap_or(1e-3);
    let r = orbits::locate_bifurcation_with(n, lambda, bracket, tol_m, &continuation_options(cfg)?)?;
    let l = if lambda == Sign::Plus { "plus" } else { "minus" };
    let mut buf = Vec::new();
    orbits::write_sweep_csv(&r.sweep, &mut buf)?;
    out.table(&format!("bifurcation_sweep_n{n}_{l}"), &buf)?;
    let summary = json!({
        "config": cfg,
        "n": r.n,
        "lambda": r.lambda,
        "m_h": r.m_h,
        "bracket": r.bracket,
        "period_at_bracket": r.period_at_bracket,
        "diagnostics": r.diagnostics,
    });
    out.json(&format!("bifurcation_n{n}_{l}"), &summary)?;
    println!(
        "m_h = {:.6}  bracket = [{:.6}, {:.6}]",
        r.m_h, r.bracket[0], r.bracket[1]
    );
    Ok(summary)
}

fn run_tfe4(cfg: &RunConfig, out: &Outputs) -> CliResult<Value> {
    let bracket = cfg.bracket.unwrap_or([1.0, 1.85]);
    let tol = cfg.tol.unwrap_or(1e-3);
    let r = orbits::tfe4_bifurcation_with(bracket, tol, &continuation_options(cfg)?)?;
    let mut buf = Vec::new();
    orbits::write_sweep_csv(&r.sweep, &mut buf)?;
    out.table("tfe4_sweep", &buf)?;
    let summary = json!({
        "config": cfg,
        "n_h": r.m_h,
        "bracket": r.bracket,
        "n_plus": orbits::tfe4_upper_bound(),
        "period_at_bracket": r.period_at_bracket,
        "diagnostics": r.diagnostics,
    });
    out.json("tfe4", &summary)?;
    println!("n_h = {:.6}  n_+ = {:.7}", r.m_h, orbits::tfe4_upper_bound());
    Ok(summary)
}

fn run_intervals(cfg: &RunConfig, out: &Outputs) -> CliResult<Value> {
    let (minus, plus) = identities::nonexistence_intervals()?;
    let hyp = identities::hyperbolicity_interval()?;
    let summary = json!({
        "config": cfg,
        "nonexistence_minus": minus.to_json_value(),
        "nonexistence_plus": plus.to_json_value(),
        "hyperbolicity": hyp.to_json_value(),
        "a1_sign_set": minus.sign_set,
    });
    out.json("intervals", &summary)?;
    println!(
        "lambda=-1: mu in ({:.6}, {:.6})  lambda=+1: mu in ({:.6}, {:.6}]  hyperbolic: ({:.6}, {:.6}]",
        minus.mu_interval[0],
        minus.mu_interval[1],
        plus.mu_interval[0],
        plus.mu_interval[1],
        hyp.mu_interval[0],
        hyp.mu_interval[1]
    );
    Ok(summary)
}

fn run_params(cfg: &RunConfig, out: &Outputs) -> CliResult<Value> {
    let m = cfg.require(cfg.m, "m")?;
    let n = cfg.require(cfg.n, "n")?;
    let lambda = cfg.lambda.unwrap_or(Sign::Minus);
    let p = params::derive(m, n, lambda)?;
    let reg = params::classify_regularity(m, n);
    let summary = json!({
        "config": cfg,
        "m": p.m,
        "n": p.n,
        "lambda": p.lambda,
        "alpha": p.alpha,
        "mu": p.mu,
        "beta": p.beta,
        "gamma_scale": p.gamma_scale,
        "cp_class": reg.cp_class,
        "fbp_gamma": reg.fbp_gamma,
        "fbp_valid": reg.fbp_valid,
        "phi0": params::phi0(&p).ok(),
    });
    out.json(&format!("params_m{m}_n{n}"), &summary)?;
    println!(
        "alpha = {}  mu = {}  beta = {}  cp_class = {:?}",
        p.alpha, p.mu, p.beta, reg.cp_class
    );
    Ok(summary)
}

fn run_positive(cfg: &RunConfig, out: &Outputs) -> CliResult<Value> {
    let m = cfg.require(cfg.m, "m")?;
    let n = cfg.require(cfg.n, "n")?;
    let p = params::derive(m, n, Sign::Minus)?;
    let f_max = cfg.f_max.unwrap_or(1.0);
    let tol = cfg.tol.unwrap_or(1e-12);
    let sol = params::fixed_point_positive(&p, f_max, tol)?;
    let err = sol.max_rel_error_vs_explicit(&p)?;
    let mut buf = String::from("f,y\n");
    for (f, y) in sol.f.iter().zip(&sol.y) {
        buf.push_str(&format!(
            "{},{}\n",
            tfe6_core::export::fmt(*f),
            tfe6_core::export::fmt(*y)
        ));
    }
    out.table(&format!("positive_m{m}_n{n}"), buf.as_bytes())?;
    let summary = json!({
        "config": cfg,
        "phi0": params::phi0(&p)?,
        "iterations": sol.iterations,
        "last_update": sol.last_update,
        "sup_rel_error_vs_explicit": err,
    });
    out.json(&format!("positive_summary_m{m}_n{n}"), &summary)?;
    println!(
        "sup relative error vs explicit = {err:.3e} after {} iterations",
        sol.iterations
    );
    Ok(summary)
}

fn run(cli: Cli) -> CliResult<Value> {
    let (name, flags) = cli.command_settings()?;
    let file = match &cli.global.config {
        Some(path) => Settings::load(path)?,
        None => Settings::default(),
    };
    let cfg = RunConfig::resolve(name, file.overlay(flags))?;
    let out = Outputs::new(&cfg.out, cfg.format)?;
    match cli.command {
        Command::M1 { .. } => run_m1(&cfg, &out),
        Command::Orbit(_) => run_orbit(&cfg, &out),
        Command::Identities(_) => run_identities(&cfg, &out),
        Command::Bifurcate { .. } => run_bifurcate(&cfg, &out),
        Command::Tfe4 { .. } => run_tfe4(&cfg, &out),
        Command::Intervals => run_intervals(&cfg, &out),
        Command::Params { .. } => run_params(&cfg, &out),
        Command::Positive { .. } => run_positive(&cfg, &out),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(_) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
