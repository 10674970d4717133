//! Versioned run configuration.
//!
//! Values come from, in increasing precedence: built-in defaults, the JSON
//! config file, command-line flags. Relative paths in a config file are
//! resolved against the file's directory.

use std::path::{Path, PathBuf};

use evflex_core::conic::SolverOptions;
use evflex_core::sopf::BuildOptions;
use evflex_core::BetaSpec;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("config {path}: {source}")]
    Parse { path: PathBuf, source: serde_json::Error },
    #[error("unsupported config version {0} (expected {CONFIG_VERSION})")]
    Version(u32),
    #[error("{0}")]
    Invalid(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Base,
    Flex,
    Validate,
    Payment,
    Full,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Paths {
    pub network: PathBuf,
    pub pools: PathBuf,
    pub out: PathBuf,
    /// Areas CSV to validate or settle instead of planning.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub areas: Option<PathBuf>,
}

impl Default for Paths {
    fn default() -> Self {
        Self { network: "data/network.json".into(), pools: "data/pools.json".into(), out: "out".into(), areas: None }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioBlock {
    pub count: usize,
    pub seed: u64,
}

impl Default for ScenarioBlock {
    fn default() -> Self {
        Self { count: 50, seed: 2023 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverBlock {
    /// Round the relaxation instead of branching.
    pub heuristic: bool,
    pub feas_tol: f64,
    pub gap_tol: f64,
    pub max_iter: u32,
    pub bb_abs_gap: f64,
    pub bb_rel_gap: f64,
    pub node_limit: usize,
    pub exact_binary_limit: usize,
    /// Seconds per MISOCP solve.
    pub time_limit: Option<f64>,
    /// Price on network losses, currency per kWh.
    pub loss_price: f64,
    pub convex_shortcut: bool,
    /// Largest rotated-cone gap accepted as an exact relaxation.
    pub exactness_tol: f64,
}

impl Default for SolverBlock {
    fn default() -> Self {
        let s = SolverOptions::default();
        let b = BuildOptions::default();
        Self {
            heuristic: true,
            feas_tol: s.feas_tol,
            gap_tol: s.gap_tol,
            max_iter: s.max_iter,
            bb_abs_gap: s.bb_abs_gap,
            bb_rel_gap: s.bb_rel_gap,
            node_limit: s.node_limit,
            exact_binary_limit: s.exact_binary_limit,
            time_limit: s.time_limit,
            loss_price: b.loss_price,
            convex_shortcut: b.convex_shortcut,
            exactness_tol: 1e-6,
        }
    }
}

impl SolverBlock {
    pub fn solver_options(&self) -> SolverOptions {
        SolverOptions {
            feas_tol: self.feas_tol,
            gap_tol: self.gap_tol,
            max_iter: self.max_iter,
            bb_abs_gap: self.bb_abs_gap,
            bb_rel_gap: self.bb_rel_gap,
            node_limit: self.node_limit,
            heuristic_only: self.heuristic,
            exact_binary_limit: self.exact_binary_limit,
            time_limit: self.time_limit,
            ..SolverOptions::default()
        }
    }

    pub fn build_options(&self) -> BuildOptions {
        BuildOptions { loss_price: self.loss_price, convex_shortcut: self.convex_shortcut, ..BuildOptions::default() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ValidationBlock {
    pub sims: usize,
    pub seed: u64,
}

impl Default for ValidationBlock {
    fn default() -> Self {
        Self { sims: 1000, seed: 7 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PaymentBlock {
    /// Fresh scenarios settled per risk level.
    pub scenarios: usize,
    pub seed: u64,
    /// Risk levels to compare; the run's `beta` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub betas: Option<Vec<f64>>,
}

impl Default for PaymentBlock {
    fn default() -> Self {
        Self { scenarios: 100, seed: 11, betas: None }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub version: u32,
    #[serde(default = "default_mode")]
    pub mode: Mode,
    #[serde(default)]
    pub paths: Paths,
    #[serde(default)]
    pub scenarios: ScenarioBlock,
    #[serde(default = "default_beta")]
    pub beta: BetaSpec,
    #[serde(default)]
    pub solver: SolverBlock,
    #[serde(default)]
    pub validation: ValidationBlock,
    #[serde(default)]
    pub payment: PaymentBlock,
}

fn default_mode() -> Mode {
    Mode::Full
}

fn default_beta() -> BetaSpec {
    BetaSpec::Scalar(0.9)
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            version: CONFIG_VERSION,
            mode: default_mode(),
            paths: Paths::default(),
            scenarios: ScenarioBlock::default(),
            beta: default_beta(),
            solver: SolverBlock::default(),
            validation: ValidationBlock::default(),
            payment: PaymentBlock::default(),
        }
    }
}

/// Command-line values that take precedence over the file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub beta: Option<f64>,
    pub scenarios: Option<usize>,
    pub out: Option<PathBuf>,
    pub areas: Option<PathBuf>,
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read { path: path.into(), source })?;
        let mut config: RunConfig =
            serde_json::from_str(&text).map_err(|source| ConfigError::Parse { path: path.into(), source })?;
        if config.version != CONFIG_VERSION {
            return Err(ConfigError::Version(config.version));
        }
        let dir = path.parent().unwrap_or(Path::new(""));
        let p = &mut config.paths;
        for field in [&mut p.network, &mut p.pools, &mut p.out] {
            if field.is_relative() {
                *field = dir.join(&*field);
            }
        }
        if let Some(a) = p.areas.as_mut().filter(|a| a.is_relative()) {
            *a = dir.join(&*a);
        }
        Ok(config)
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(seed) = o.seed {
            self.scenarios.seed = seed;
        }
        if let Some(beta) = o.beta {
            self.beta = BetaSpec::Scalar(beta);
        }
        if let Some(n) = o.scenarios {
            self.scenarios.count = n;
        }
        if let Some(out) = &o.out {
            self.paths.out = out.clone();
        }
        if let Some(areas) = &o.areas {
            self.paths.areas = Some(areas.clone());
        }
    }

    /// Checks everything that can be checked without loading the inputs.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        if self.version != CONFIG_VERSION {
            return Err(ConfigError::Version(self.version));
        }
        let beta_ok = |b: &f64| (0.0..=1.0).contains(b);
        match &self.beta {
            BetaSpec::Scalar(b) if !beta_ok(b) => return bad(format!("beta {b} outside [0, 1]")),
            BetaSpec::Table(rows) => {
                if let Some(b) = rows.iter().flatten().find(|b| !beta_ok(b)) {
                    return bad(format!("beta {b} outside [0, 1]"));
                }
            }
            _ => {}
        }
        if let Some(b) = self.payment.betas.iter().flatten().find(|b| !beta_ok(b)) {
            return bad(format!("payment beta {b} outside [0, 1]"));
        }
        if self.scenarios.count == 0 {
            return bad("scenarios.count must be at least 1".into());
        }
        if self.validation.sims == 0 {
            return bad("validation.sims must be at least 1".into());
        }
        if self.payment.scenarios == 0 {
            return bad("payment.scenarios must be at least 1".into());
        }
        if let Err(e) = self.solver.solver_options().validate() {
            return bad(format!("solver options: {e}"));
        }
        if !(self.solver.loss_price >= 0.0 && self.solver.loss_price.is_finite()) {
            return bad("solver.loss_price must be finite and nonnegative".into());
        }
        if !(self.solver.exactness_tol > 0.0) {
            return bad("solver.exactness_tol must be positive".into());
        }
        for (name, path) in [("network", &self.paths.network), ("pools", &self.paths.pools)] {
            if !path.is_file() {
                return bad(format!("{name} file {} does not exist", path.display()));
            }
        }
        if let Some(a) = &self.paths.areas {
            if !a.is_file() {
                return bad(format!("areas file {} does not exist", a.display()));
            }
        }
        Ok(())
    }
}
