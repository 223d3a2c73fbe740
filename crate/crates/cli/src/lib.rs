//! Command-line front end: run configuration, subcommands and report
//! emission. The binary in `main.rs` is a thin clap wrapper around
//! [`commands`].

use std::fmt::Write as _;
use std::path::PathBuf;

use oamap::beam_channel::{ReferenceFrame, SystemConfig};
use oamap::constellation::DesignOptions;
use oamap::mapgen::{config_digest, Grid, MapError};

pub mod commands;

/// Schema tag carried by every JSON report.
pub const REPORT_SCHEMA: &str = "oamap-report 1";

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Validation(String),
    #[error("verification failed: {0}")]
    Verification(String),
    #[error("i/o error on {}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 2,
            CliError::Verification(_) => 3,
            CliError::Io { .. } => 4,
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io { path: path.into(), source }
    }
}

impl From<oamap::Error> for CliError {
    fn from(e: oamap::Error) -> Self {
        CliError::Validation(e.to_string())
    }
}

impl From<MapError> for CliError {
    fn from(e: MapError) -> Self {
        match e {
            MapError::Io { path, source } => CliError::Io { path: path.into(), source },
            other => CliError::Validation(other.to_string()),
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;

/// Everything a run needs, loaded from a flat `key = value` file.
///
/// | key | meaning | default |
/// |-----|---------|---------|
/// | `carriers_ghz` | comma list of carrier frequencies | `60, 61` |
/// | `modes` | comma list of signed OAM modes | `0, +1` |
/// | `rayleigh_distance_m` | shared Rayleigh distance | `4` |
/// | `symbols` | constellation size `M` | `64` |
/// | `power_budget` | average power `P_sum` | `1` |
/// | `noise_power` | `N0` | `1e-10` |
/// | `frame` | reference carrier index and mode for `beta` | `0, +1` |
/// | `beta_grid` | `lo, hi, step` | `0.2, 2.2, 0.1` |
/// | `z_grid` | `lo, hi, step` in metres | `0.5, 4, 0.25` |
/// | `restarts` | random SCA restarts per design | `10` |
/// | `max_iterations` | SCA iteration cap | `200` |
/// | `tolerance` | relative SCA stopping tolerance | `1e-6` |
/// | `tau` | clustering threshold | `0.15` |
/// | `trials` | clustering repetitions `C_d` | `100` |
/// | `seed` | master seed | `0` |
///
/// Blank lines and `#` comments are ignored.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub carriers_ghz: Vec<f64>,
    pub modes: Vec<i32>,
    pub rayleigh_distance: f64,
    pub symbols: usize,
    pub power_budget: f64,
    pub noise_power: f64,
    pub frame: (usize, i32),
    pub beta_grid: (f64, f64, f64),
    pub z_grid: (f64, f64, f64),
    pub restarts: usize,
    pub max_iterations: usize,
    pub tolerance: f64,
    pub tau: f64,
    pub trials: usize,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            carriers_ghz: vec![60.0, 61.0],
            modes: vec![0, 1],
            rayleigh_distance: 4.0,
            symbols: 64,
            power_budget: 1.0,
            noise_power: 1e-10,
            frame: (0, 1),
            beta_grid: (0.2, 2.2, 0.1),
            z_grid: (0.5, 4.0, 0.25),
            restarts: 10,
            max_iterations: 200,
            tolerance: 1e-6,
            tau: 0.15,
            trials: 100,
            seed: 0,
        }
    }
}

fn bad(key: &str, value: &str) -> CliError {
    CliError::Validation(format!("invalid value `{value}` for `{key}`"))
}

fn scalar<T: std::str::FromStr>(key: &str, value: &str) -> CliResult<T> {
    value.trim().trim_start_matches('+').parse().map_err(|_| bad(key, value))
}

fn list<T: std::str::FromStr>(key: &str, value: &str) -> CliResult<Vec<T>> {
    value.split(',').map(|v| scalar(key, v)).collect()
}

fn triple(key: &str, value: &str) -> CliResult<(f64, f64, f64)> {
    match list::<f64>(key, value)?[..] {
        [a, b, c] => Ok((a, b, c)),
        _ => Err(bad(key, value)),
    }
}

fn signed(l: i32) -> String {
    if l > 0 {
        format!("+{l}")
    } else {
        l.to_string()
    }
}

impl RunConfig {
    /// Parses and validates a configuration; unspecified keys keep their
    /// defaults.
    pub fn parse(text: &str) -> CliResult<Self> {
        let mut cfg = Self::default();
        let mut seen: Vec<String> = Vec::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| CliError::Validation(format!("line {}: expected `key = value`", n + 1)))?;
            let (key, value) = (key.trim(), value.trim());
            if seen.iter().any(|k| k == key) {
                return Err(CliError::Validation(format!("key `{key}` given twice")));
            }
            seen.push(key.to_string());
            match key {
                "carriers_ghz" => cfg.carriers_ghz = list(key, value)?,
                "modes" => cfg.modes = list(key, value)?,
                "rayleigh_distance_m" => cfg.rayleigh_distance = scalar(key, value)?,
                "symbols" => cfg.symbols = scalar(key, value)?,
                "power_budget" => cfg.power_budget = scalar(key, value)?,
                "noise_power" => cfg.noise_power = scalar(key, value)?,
                "frame" => {
                    let parts: Vec<&str> = value.split(',').collect();
                    if parts.len() != 2 {
                        return Err(bad(key, value));
                    }
                    cfg.frame = (scalar(key, parts[0])?, scalar(key, parts[1])?);
                }
                "beta_grid" => cfg.beta_grid = triple(key, value)?,
                "z_grid" => cfg.z_grid = triple(key, value)?,
                "restarts" => cfg.restarts = scalar(key, value)?,
                "max_iterations" => cfg.max_iterations = scalar(key, value)?,
                "tolerance" => cfg.tolerance = scalar(key, value)?,
                "tau" => cfg.tau = scalar(key, value)?,
                "trials" => cfg.trials = scalar(key, value)?,
                "seed" => cfg.seed = scalar(key, value)?,
                other => return Err(CliError::Validation(format!("unknown key `{other}`"))),
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::parse(&text)
    }

    pub fn validate(&self) -> CliResult<()> {
        let system = self.system()?;
        self.frame()?.validate(&system)?;
        self.grid()?;
        if self.restarts == 0 || self.max_iterations == 0 || self.trials == 0 {
            return Err(CliError::Validation("restarts, max_iterations and trials must be positive".into()));
        }
        if !(self.tolerance >= 0.0) || !(self.tau >= 0.0) {
            return Err(CliError::Validation("tolerance and tau must be non-negative".into()));
        }
        Ok(())
    }

    pub fn system(&self) -> CliResult<SystemConfig> {
        let hz = self.carriers_ghz.iter().map(|f| f * 1e9).collect();
        Ok(SystemConfig::new(hz, self.modes.clone(), self.rayleigh_distance, self.symbols)?
            .with_power_budget(self.power_budget)?
            .with_noise_power(self.noise_power)?)
    }

    pub fn frame(&self) -> CliResult<ReferenceFrame> {
        Ok(ReferenceFrame::new(self.frame.0, self.frame.1)?)
    }

    pub fn grid(&self) -> CliResult<Grid> {
        Ok(Grid::new(self.beta_grid, self.z_grid, self.frame()?)?)
    }

    pub fn design_options(&self) -> DesignOptions {
        DesignOptions {
            restarts: self.restarts,
            max_iterations: self.max_iterations,
            tolerance: self.tolerance,
            seed: self.seed,
            warm_start: None,
        }
    }

    /// Every key in a fixed order with canonical number formatting.
    pub fn canonical_text(&self) -> String {
        let join = |v: &[f64]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(", ");
        let mut out = String::new();
        let _ = writeln!(out, "carriers_ghz = {}", join(&self.carriers_ghz));
        let modes: Vec<String> = self.modes.iter().map(|l| signed(*l)).collect();
        let _ = writeln!(out, "modes = {}", modes.join(", "));
        let _ = writeln!(out, "rayleigh_distance_m = {}", self.rayleigh_distance);
        let _ = writeln!(out, "symbols = {}", self.symbols);
        let _ = writeln!(out, "power_budget = {}", self.power_budget);
        let _ = writeln!(out, "noise_power = {:e}", self.noise_power);
        let _ = writeln!(out, "frame = {}, {}", self.frame.0, signed(self.frame.1));
        let (b, z) = (self.beta_grid, self.z_grid);
        let _ = writeln!(out, "beta_grid = {}", join(&[b.0, b.1, b.2]));
        let _ = writeln!(out, "z_grid = {}", join(&[z.0, z.1, z.2]));
        let _ = writeln!(out, "restarts = {}", self.restarts);
        let _ = writeln!(out, "max_iterations = {}", self.max_iterations);
        let _ = writeln!(out, "tolerance = {:e}", self.tolerance);
        let _ = writeln!(out, "tau = {}", self.tau);
        let _ = writeln!(out, "trials = {}", self.trials);
        let _ = writeln!(out, "seed = {}", self.seed);
        out
    }

    pub fn hash(&self) -> String {
        config_digest(&self.canonical_text())
    }
}
