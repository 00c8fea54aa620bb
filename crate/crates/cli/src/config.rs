//! Run configuration: a JSON file mirroring the command-line flags, with
//! flags taking precedence. The resolved configuration is embedded in every
//! JSON output.

use std::path::{Path, PathBuf};

use clap::ValueEnum;
use serde::{Deserialize, Serialize};
use tfe6_core::odeflow::{CrossingMode, Tolerance, DEFAULT_REG_EPS};
use tfe6_core::params::Sign;

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
}

impl Format {
    pub fn extension(self) -> &'static str {
        match self {
            Format::Csv => "csv",
            Format::Json => "json",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Crossing {
    Resolved,
    Regularized,
}

impl From<Crossing> for CrossingMode {
    fn from(c: Crossing) -> Self {
        match c {
            Crossing::Resolved => CrossingMode::Resolved,
            Crossing::Regularized => CrossingMode::Regularized,
        }
    }
}

/// Every setting that can come from the file or the command line; `None`
/// means "not given here".
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Settings {
    pub abs_tol: Option<f64>,
    pub rel_tol: Option<f64>,
    pub reg_eps: Option<f64>,
    pub out: Option<PathBuf>,
    pub format: Option<Format>,
    pub crossing: Option<Crossing>,
    pub lambda: Option<Sign>,
    pub pieces: Option<usize>,
    pub m: Option<f64>,
    pub n: Option<f64>,
    pub bracket: Option<[f64; 2]>,
    pub tol_m: Option<f64>,
    pub tol: Option<f64>,
    pub s_max: Option<f64>,
    pub f_max: Option<f64>,
}

macro_rules! overlay {
    ($base:ident, $top:ident, $($f:ident),*) => {
        Settings { $($f: $top.$f.or($base.$f)),* }
    };
}

impl Settings {
    pub fn load(path: &Path) -> Result<Settings, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    /// Values in `top` win over values in `self`.
    pub fn overlay(self, top: Settings) -> Settings {
        let base = self;
        overlay!(
            base, top, abs_tol, rel_tol, reg_eps, out, format, crossing, lambda, pieces, m, n, bracket, tol_m, tol,
            s_max, f_max
        )
    }
}

/// Settings after defaults have been applied to the global part.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub command: String,
    pub abs_tol: f64,
    pub rel_tol: f64,
    pub reg_eps: f64,
    pub out: PathBuf,
    pub format: Format,
    pub crossing: Crossing,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda: Option<Sign>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pieces: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub m: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bracket: Option<[f64; 2]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tol_m: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tol: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub s_max: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub f_max: Option<f64>,
}

impl RunConfig {
    pub fn resolve(command: &str, s: Settings) -> Result<RunConfig, CliError> {
        let default_tol = Tolerance::default();
        let cfg = RunConfig {
            command: command.to_string(),
            abs_tol: s.abs_tol.unwrap_or(default_tol.abs),
            rel_tol: s.rel_tol.unwrap_or(default_tol.rel),
            reg_eps: s.reg_eps.unwrap_or(DEFAULT_REG_EPS),
            out: s.out.unwrap_or_else(|| PathBuf::from("out")),
            format: s.format.unwrap_or(Format::Csv),
            crossing: s.crossing.unwrap_or(Crossing::Resolved),
            lambda: s.lambda,
            pieces: s.pieces,
            m: s.m,
            n: s.n,
            bracket: s.bracket,
            tol_m: s.tol_m,
            tol: s.tol,
            s_max: s.s_max,
            f_max: s.f_max,
        };
        if !(cfg.abs_tol > 0.0 && cfg.rel_tol > 0.0) {
            return Err(CliError::Config(format!(
                "tolerances must be positive, got abs {} rel {}",
                cfg.abs_tol, cfg.rel_tol
            )));
        }
        if cfg.reg_eps.is_nan() || cfg.reg_eps < 0.0 {
            return Err(CliError::Config(format!(
                "reg_eps must be non-negative, got {}",
                cfg.reg_eps
            )));
        }
        Ok(cfg)
    }

    pub fn tolerance(&self) -> Result<Tolerance, CliError> {
        Tolerance::new(self.abs_tol, self.rel_tol).map_err(CliError::Core)
    }

    pub fn require<T: Copy>(&self, value: Option<T>, name: &str) -> Result<T, CliError> {
        value.ok_or_else(|| CliError::Config(format!("missing --{name} (flag or config file)")))
    }
}
