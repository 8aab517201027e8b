//! Declarative run configuration.
//!
//! A TOML file with one table per concern; missing keys take defaults and
//! unknown keys are rejected. Command-line flags override the file.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::cexdex::{CexDexProblem, MarketParams};
use crate::control::{PendingLimits, PriorityLadder};
use crate::error::{Error, Result};
use crate::grid::{GridParams, GridSpec};
use crate::sim::SimConfig;
use crate::solver::SolveOptions;

/// Fee ladder: either explicit `fees`/`rates` or an arithmetic recipe.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LadderConfig {
    pub levels: usize,
    pub fee0: f64,
    pub fee_step: f64,
    pub rate0: f64,
    pub rate_step: f64,
    pub fees: Option<Vec<f64>>,
    pub rates: Option<Vec<f64>>,
    /// Multiplies every rate.
    pub rate_scale: f64,
}

impl Default for LadderConfig {
    fn default() -> Self {
        Self {
            levels: 3,
            fee0: 100.0,
            fee_step: 200.0,
            rate0: 2.0,
            rate_step: 0.5,
            fees: None,
            rates: None,
            rate_scale: 1.0,
        }
    }
}

impl LadderConfig {
    pub fn build(&self) -> Result<PriorityLadder> {
        let ladder = match (&self.fees, &self.rates) {
            (Some(f), Some(r)) => {
                let n = self.levels.min(f.len()).min(r.len());
                if f.len() != r.len() || n != self.levels {
                    return Err(config_err(
                        "ladder",
                        "fees and rates must both list `levels` entries",
                    ));
                }
                PriorityLadder::new(f.clone(), r.clone())?
            }
            (None, None) => PriorityLadder::arithmetic(
                self.levels,
                self.fee0,
                self.fee_step,
                self.rate0,
                self.rate_step,
            )?,
            _ => {
                return Err(config_err(
                    "ladder",
                    "give both `fees` and `rates` or neither",
                ))
            }
        };
        if self.rate_scale == 1.0 {
            Ok(ladder)
        } else {
            ladder.scale_rates(self.rate_scale)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LimitsConfig {
    pub max_pending: usize,
    pub volume_bound: f64,
    pub pending_cap: f64,
}

impl Default for LimitsConfig {
    fn default() -> Self {
        Self {
            max_pending: 1,
            volume_bound: 10.0,
            pending_cap: 10.0,
        }
    }
}

/// Slices for `regions` and `fees`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MapsConfig {
    pub times: Vec<f64>,
    pub inventories: Vec<f64>,
}

impl Default for MapsConfig {
    fn default() -> Self {
        Self {
            times: vec![0.2, 0.5, 0.8],
            inventories: vec![0.0, 20.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    pub levels: Vec<usize>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            levels: vec![1, 2, 3],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CompareConfig {
    /// Also run the lockstep PDE evaluation of the random-fee policy.
    pub pde: bool,
}

impl Default for CompareConfig {
    fn default() -> Self {
        Self { pde: true }
    }
}

/// Full run configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub output: PathBuf,
    /// Worker threads; unset uses every core. Never affects results.
    pub threads: Option<usize>,
    pub market: MarketParams,
    pub ladder: LadderConfig,
    pub limits: LimitsConfig,
    pub grid: GridParams,
    pub solve: SolveOptions,
    pub sim: SimConfig,
    pub maps: MapsConfig,
    pub sweep: SweepConfig,
    pub compare: CompareConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            output: PathBuf::from("out"),
            threads: None,
            market: MarketParams::default(),
            ladder: LadderConfig::default(),
            limits: LimitsConfig::default(),
            grid: GridParams::default(),
            solve: SolveOptions {
                retain_times: vec![0.2, 0.5, 0.8],
                residual_every: 25,
                ..SolveOptions::default()
            },
            sim: SimConfig::default(),
            maps: MapsConfig::default(),
            sweep: SweepConfig::default(),
            compare: CompareConfig::default(),
        }
    }
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub output: Option<PathBuf>,
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    pub levels: Option<usize>,
    pub times: Option<Vec<f64>>,
    pub inventories: Option<Vec<f64>>,
}

fn config_err(key: &str, reason: impl Into<String>) -> Error {
    Error::Config {
        key: key.to_string(),
        reason: reason.into(),
    }
}

/// Best guess at the key a TOML error is about.
fn offending_key(e: &toml::de::Error) -> String {
    let msg = e.message();
    if let Some(start) = msg.find('`') {
        if let Some(len) = msg[start + 1..].find('`') {
            return msg[start + 1..start + 1 + len].to_string();
        }
    }
    "<document>".to_string()
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text)
            .map_err(|e| config_err(&offending_key(&e), e.message().to_string()))?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| config_err("--config", format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| config_err("<document>", e.to_string()))
    }

    /// Defaults, then `path` if given, then `ov`; validated.
    pub fn resolve(path: Option<&Path>, ov: &Overrides) -> Result<Self> {
        let mut cfg = match path {
            Some(p) => Self::load(p)?,
            None => Self::default(),
        };
        cfg.apply(ov);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn apply(&mut self, ov: &Overrides) {
        if let Some(o) = &ov.output {
            self.output = o.clone();
        }
        if let Some(s) = ov.seed {
            self.sim.seed = s;
        }
        if let Some(t) = ov.threads {
            self.threads = Some(t);
        }
        if let Some(n) = ov.levels {
            self.ladder.levels = n;
        }
        if let Some(t) = &ov.times {
            self.maps.times = t.clone();
        }
        if let Some(q) = &ov.inventories {
            self.maps.inventories = q.clone();
        }
    }

    /// Checks every section; errors name the section at fault.
    pub fn validate(&self) -> Result<()> {
        let tag = |key: &'static str| move |e: Error| config_err(key, e.to_string());
        self.market.validate().map_err(tag("market"))?;
        self.ladder.build().map_err(tag("ladder"))?;
        self.problem().map_err(tag("limits"))?;
        self.sim.validate().map_err(tag("sim"))?;
        if self.threads == Some(0) {
            return Err(config_err("threads", "must be at least 1"));
        }
        if self.sweep.levels.is_empty() {
            return Err(config_err("sweep.levels", "must not be empty"));
        }
        if self.solve.nu_budget_mb == 0 {
            return Err(config_err("solve.nu_budget_mb", "must be positive"));
        }
        if self.grid.sz_points < 3 || self.grid.q_points < 3 {
            return Err(config_err("grid", "axes need at least 3 points"));
        }
        Ok(())
    }

    pub fn problem(&self) -> Result<CexDexProblem> {
        CexDexProblem::new(
            self.market,
            self.ladder.build()?,
            PendingLimits {
                max_pending: self.limits.max_pending,
                volume_bound: self.limits.volume_bound,
                pending_cap: self.limits.pending_cap,
            },
        )
    }

    pub fn grid_spec(&self, problem: &CexDexProblem) -> Result<GridSpec> {
        GridSpec::from_params(problem, &self.grid).map_err(|e| match e {
            Error::InvalidGrid(r) => config_err("grid", r),
            other => other,
        })
    }

    pub fn solve_options(&self) -> SolveOptions {
        SolveOptions {
            threads: self.threads,
            ..self.solve.clone()
        }
    }

    /// SHA-256 over the sections that determine a solve: market, ladder,
    /// limits, grid and solve options. Output path and thread count are
    /// excluded so they never change artifacts.
    pub fn problem_hash(&self) -> String {
        #[derive(Serialize)]
        struct Key<'a> {
            market: &'a MarketParams,
            ladder: &'a LadderConfig,
            limits: &'a LimitsConfig,
            grid: &'a GridParams,
            solve: SolveOptions,
        }
        let key = Key {
            market: &self.market,
            ladder: &self.ladder,
            limits: &self.limits,
            grid: &self.grid,
            solve: SolveOptions {
                threads: None,
                ..self.solve.clone()
            },
        };
        let bytes = serde_json::to_vec(&key).expect("config serializes");
        hex::encode(Sha256::digest(bytes))
    }
}
