//! Experiment configuration: a flat dotted-key TOML file plus `key=value`
//! overrides.
//!
//! ```toml
//! market.mu_r = -3.0
//! campaign.budget = 300.0
//! experiment.algorithms = ["mpc", "pid", "dogd", "optimal"]
//! ```

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use thiserror::Error;
use toml::{Table, Value};

use crate::auction::{CampaignConfig, ConversionMode, MarketParams};
use crate::baselines::{DogdConfig, LearningRate, PidConfig};
use crate::strategy::MpcConfig;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("unknown config key `{0}`")]
    UnknownKey(String),
    #[error("invalid value for `{key}`: {reason}")]
    InvalidValue { key: String, reason: String },
    #[error("cannot parse config: {0}")]
    Parse(String),
    #[error("cannot read config {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
}

fn invalid(key: &str, reason: impl Into<String>) -> ConfigError {
    ConfigError::InvalidValue { key: key.to_string(), reason: reason.into() }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Algorithm {
    Mpc,
    MpcCostCap,
    Pid,
    Dogd,
    Constant,
    Optimal,
}

impl Algorithm {
    pub const ALL: [Algorithm; 6] = [
        Algorithm::Mpc,
        Algorithm::MpcCostCap,
        Algorithm::Pid,
        Algorithm::Dogd,
        Algorithm::Constant,
        Algorithm::Optimal,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Algorithm::Mpc => "mpc",
            Algorithm::MpcCostCap => "mpc_cost_cap",
            Algorithm::Pid => "pid",
            Algorithm::Dogd => "dogd",
            Algorithm::Constant => "constant",
            Algorithm::Optimal => "optimal",
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Algorithm {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Algorithm::ALL
            .iter()
            .find(|a| a.as_str() == s.trim())
            .copied()
            .ok_or_else(|| format!("unknown algorithm `{s}`"))
    }
}

/// Hyperparameter grids and the number of tuning episodes per grid point.
#[derive(Debug, Clone, PartialEq)]
pub struct TuningConfig {
    pub enabled: bool,
    pub episodes: usize,
    pub pid_kp_grid: Vec<f64>,
    pub pid_ki_grid: Vec<f64>,
    pub pid_kd_grid: Vec<f64>,
    pub dogd_eps_grid: Vec<f64>,
    /// `None` selects the market-derived default grid.
    pub oracle_grid: Option<Vec<f64>>,
    /// Linear refinement points around the coarse oracle optimum.
    pub oracle_refine: usize,
}

impl Default for TuningConfig {
    fn default() -> Self {
        TuningConfig {
            enabled: true,
            episodes: 20,
            pid_kp_grid: vec![0.1, 0.25, 0.5, 1.0, 2.0],
            pid_ki_grid: vec![0.0, 0.01, 0.05, 0.1],
            pid_kd_grid: vec![0.0, 0.1, 0.3],
            dogd_eps_grid: vec![0.05, 0.1, 0.2, 0.5, 1.0, 2.0, 5.0, 10.0],
            oracle_grid: None,
            oracle_refine: 50,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub market: MarketParams,
    pub campaign: CampaignConfig,
    pub mpc_cold_start: bool,
    pub mpc_jitter: bool,
    pub mpc_collapse_tolerance: f64,
    pub pid: PidConfig,
    pub dogd: DogdConfig,
    /// Bid of the `constant` algorithm; follows the initial bid when unset.
    pub constant_bid: Option<f64>,
    pub algorithms: Vec<Algorithm>,
    pub episodes: usize,
    pub seed: u64,
    pub tuning: TuningConfig,
    pub sweep_initial_bids: Vec<f64>,
    pub output_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            market: MarketParams::default(),
            campaign: CampaignConfig::default(),
            mpc_cold_start: true,
            mpc_jitter: true,
            mpc_collapse_tolerance: 0.0,
            pid: PidConfig::default(),
            dogd: DogdConfig::default(),
            constant_bid: None,
            algorithms: vec![Algorithm::Mpc, Algorithm::Pid, Algorithm::Dogd, Algorithm::Optimal],
            episodes: 100,
            seed: 2024,
            tuning: TuningConfig::default(),
            sweep_initial_bids: vec![0.0001, 0.001, 0.01, 0.05, 0.1, 0.5, 1.0],
            output_dir: PathBuf::from("out"),
        }
    }
}

/// Every key the config understands, in documentation order.
pub const KEYS: &[&str] = &[
    "market.mu_r",
    "market.sigma_r",
    "market.mu_c",
    "market.sigma_c",
    "market.total_opportunities",
    "market.cycle_size",
    "market.conversion_mode",
    "market.request_noise",
    "campaign.budget",
    "campaign.cost_cap",
    "campaign.initial_bid",
    "campaign.window_n",
    "campaign.grid_max",
    "campaign.grid_step",
    "campaign.min_cost",
    "mpc.cold_start",
    "mpc.jitter",
    "mpc.collapse_tolerance",
    "pid.kp",
    "pid.ki",
    "pid.kd",
    "pid.output_limit",
    "pid.integral_limit",
    "dogd.eps",
    "dogd.schedule",
    "dogd.lambda_min",
    "dogd.lambda_max",
    "constant.bid",
    "tuning.enabled",
    "tuning.episodes",
    "tuning.pid_kp_grid",
    "tuning.pid_ki_grid",
    "tuning.pid_kd_grid",
    "tuning.dogd_eps_grid",
    "tuning.oracle_grid",
    "tuning.oracle_refine",
    "experiment.algorithms",
    "experiment.episodes",
    "experiment.seed",
    "experiment.output_dir",
    "sweep.initial_bids",
];

fn as_f64(key: &str, v: &Value) -> Result<f64, ConfigError> {
    match v {
        Value::Float(f) => Ok(*f),
        Value::Integer(i) => Ok(*i as f64),
        _ => Err(invalid(key, "expected a number")),
    }
}

fn as_u64(key: &str, v: &Value) -> Result<u64, ConfigError> {
    match v {
        Value::Integer(i) if *i >= 0 => Ok(*i as u64),
        _ => Err(invalid(key, "expected a non-negative integer")),
    }
}

fn as_bool(key: &str, v: &Value) -> Result<bool, ConfigError> {
    v.as_bool().ok_or_else(|| invalid(key, "expected true or false"))
}

fn as_str<'a>(key: &str, v: &'a Value) -> Result<&'a str, ConfigError> {
    v.as_str().ok_or_else(|| invalid(key, "expected a string"))
}

fn as_f64_list(key: &str, v: &Value) -> Result<Vec<f64>, ConfigError> {
    match v {
        Value::Array(items) => items.iter().map(|x| as_f64(key, x)).collect(),
        Value::String(s) => s
            .split(',')
            .filter(|p| !p.trim().is_empty())
            .map(|p| p.trim().parse::<f64>().map_err(|e| invalid(key, e.to_string())))
            .collect(),
        other => Ok(vec![as_f64(key, other)?]),
    }
}

fn as_str_list(key: &str, v: &Value) -> Result<Vec<String>, ConfigError> {
    match v {
        Value::Array(items) => items.iter().map(|x| as_str(key, x).map(str::to_string)).collect(),
        Value::String(s) => Ok(s.split(',').map(|p| p.trim().to_string()).filter(|p| !p.is_empty()).collect()),
        _ => Err(invalid(key, "expected a list of strings")),
    }
}

fn flatten(prefix: &str, table: &Table, out: &mut Vec<(String, Value)>) {
    for (k, v) in table {
        let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
        match v {
            Value::Table(t) => flatten(&key, t, out),
            other => out.push((key, other.clone())),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = ExperimentConfig::default();
        cfg.merge_toml_str(text)?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| ConfigError::Read { path: path.to_path_buf(), source })?;
        Self::from_toml_str(&text)
    }

    pub fn merge_toml_str(&mut self, text: &str) -> Result<(), ConfigError> {
        let table: Table = text.parse().map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))?;
        let mut entries = Vec::new();
        flatten("", &table, &mut entries);
        for (key, value) in entries {
            self.set(&key, &value)?;
        }
        Ok(())
    }

    /// Applies a `key=value` override; the value uses TOML syntax, with bare
    /// words accepted as strings.
    pub fn apply_override(&mut self, assignment: &str) -> Result<(), ConfigError> {
        let (key, raw) = assignment
            .split_once('=')
            .ok_or_else(|| ConfigError::Parse(format!("override `{assignment}` is not key=value")))?;
        let key = key.trim();
        let raw = raw.trim();
        let value = format!("v = {raw}")
            .parse::<Table>()
            .ok()
            .and_then(|mut t| t.remove("v"))
            .unwrap_or_else(|| Value::String(raw.to_string()));
        self.set(key, &value)
    }

    pub fn set(&mut self, key: &str, v: &Value) -> Result<(), ConfigError> {
        match key {
            "market.mu_r" => self.market.utility_mu = as_f64(key, v)?,
            "market.sigma_r" => self.market.utility_sigma = as_f64(key, v)?,
            "market.mu_c" => self.market.price_mu = as_f64(key, v)?,
            "market.sigma_c" => self.market.price_sigma = as_f64(key, v)?,
            "market.total_opportunities" => self.market.total_opportunities = as_u64(key, v)?,
            "market.cycle_size" => self.market.cycle_size = as_u64(key, v)?,
            "market.conversion_mode" => {
                self.market.conversion_mode = match as_str(key, v)? {
                    "expected" => ConversionMode::Expected,
                    "bernoulli" => ConversionMode::Bernoulli,
                    other => return Err(invalid(key, format!("`{other}` is not expected|bernoulli"))),
                }
            }
            "market.request_noise" => self.market.request_noise = as_f64(key, v)?,
            "campaign.budget" => self.campaign.budget = as_f64(key, v)?,
            "campaign.cost_cap" => {
                self.campaign.cost_cap = match v {
                    Value::String(s) if s == "none" => None,
                    other => Some(as_f64(key, other)?),
                }
            }
            "campaign.initial_bid" => self.campaign.initial_bid = as_f64(key, v)?,
            "campaign.window_n" => self.campaign.window = as_u64(key, v)? as usize,
            "campaign.grid_max" => self.campaign.max_bid = as_f64(key, v)?,
            "campaign.grid_step" => self.campaign.bid_step = as_f64(key, v)?,
            "campaign.min_cost" => self.campaign.min_cost = as_f64(key, v)?,
            "mpc.cold_start" => self.mpc_cold_start = as_bool(key, v)?,
            "mpc.jitter" => self.mpc_jitter = as_bool(key, v)?,
            "mpc.collapse_tolerance" => self.mpc_collapse_tolerance = as_f64(key, v)?,
            "pid.kp" => self.pid.kp = as_f64(key, v)?,
            "pid.ki" => self.pid.ki = as_f64(key, v)?,
            "pid.kd" => self.pid.kd = as_f64(key, v)?,
            "pid.output_limit" => self.pid.output_limit = as_f64(key, v)?,
            "pid.integral_limit" => self.pid.integral_limit = as_f64(key, v)?,
            "dogd.eps" => {
                let eps = as_f64(key, v)?;
                self.dogd.learning_rate = match self.dogd.learning_rate {
                    LearningRate::Constant(_) => LearningRate::Constant(eps),
                    LearningRate::InverseSqrt(_) => LearningRate::InverseSqrt(eps),
                };
            }
            "dogd.schedule" => {
                let eps = self.dogd.learning_rate.at(0);
                self.dogd.learning_rate = match as_str(key, v)? {
                    "constant" => LearningRate::Constant(eps),
                    "inverse_sqrt" => LearningRate::InverseSqrt(eps),
                    other => return Err(invalid(key, format!("`{other}` is not constant|inverse_sqrt"))),
                };
            }
            "dogd.lambda_min" => self.dogd.lambda_min = as_f64(key, v)?,
            "dogd.lambda_max" => self.dogd.lambda_max = as_f64(key, v)?,
            "constant.bid" => self.constant_bid = Some(as_f64(key, v)?),
            "tuning.enabled" => self.tuning.enabled = as_bool(key, v)?,
            "tuning.episodes" => self.tuning.episodes = as_u64(key, v)? as usize,
            "tuning.pid_kp_grid" => self.tuning.pid_kp_grid = as_f64_list(key, v)?,
            "tuning.pid_ki_grid" => self.tuning.pid_ki_grid = as_f64_list(key, v)?,
            "tuning.pid_kd_grid" => self.tuning.pid_kd_grid = as_f64_list(key, v)?,
            "tuning.dogd_eps_grid" => self.tuning.dogd_eps_grid = as_f64_list(key, v)?,
            "tuning.oracle_grid" => self.tuning.oracle_grid = Some(as_f64_list(key, v)?),
            "tuning.oracle_refine" => self.tuning.oracle_refine = as_u64(key, v)? as usize,
            "experiment.algorithms" => {
                self.algorithms = as_str_list(key, v)?
                    .iter()
                    .map(|s| s.parse::<Algorithm>().map_err(|e| invalid(key, e)))
                    .collect::<Result<_, _>>()?
            }
            "experiment.episodes" => self.episodes = as_u64(key, v)? as usize,
            "experiment.seed" => self.seed = as_u64(key, v)?,
            "experiment.output_dir" => self.output_dir = PathBuf::from(as_str(key, v)?),
            "sweep.initial_bids" => self.sweep_initial_bids = as_f64_list(key, v)?,
            _ => return Err(ConfigError::UnknownKey(key.to_string())),
        }
        Ok(())
    }

    pub fn mpc_config(&self, initial_bid: f64) -> MpcConfig {
        MpcConfig {
            initial_bid,
            max_bid: self.campaign.max_bid,
            bid_step: self.campaign.bid_step,
            cold_start: self.mpc_cold_start,
            jitter: self.mpc_jitter,
            collapse_tolerance: self.mpc_collapse_tolerance,
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.market
            .validate()
            .map_err(|e| invalid("market", e.to_string()))?;
        self.campaign
            .validate()
            .map_err(|e| invalid("campaign", e.to_string()))?;
        if self.episodes == 0 {
            return Err(invalid("experiment.episodes", "must be >= 1"));
        }
        if self.algorithms.is_empty() {
            return Err(invalid("experiment.algorithms", "must not be empty"));
        }
        if self.algorithms.contains(&Algorithm::MpcCostCap) && self.campaign.cost_cap.is_none() {
            return Err(invalid("campaign.cost_cap", "required by mpc_cost_cap"));
        }
        if self.sweep_initial_bids.iter().any(|b| !(*b > 0.0)) {
            return Err(invalid("sweep.initial_bids", "values must be > 0"));
        }
        if let Some(b) = self.constant_bid {
            if !(b >= 0.0 && b.is_finite()) {
                return Err(invalid("constant.bid", "must be finite and >= 0"));
            }
        }
        if self.tuning.enabled && self.tuning.episodes == 0 {
            return Err(invalid("tuning.episodes", "must be >= 1"));
        }
        for (key, grid) in [
            ("tuning.pid_kp_grid", &self.tuning.pid_kp_grid),
            ("tuning.pid_ki_grid", &self.tuning.pid_ki_grid),
            ("tuning.pid_kd_grid", &self.tuning.pid_kd_grid),
            ("tuning.dogd_eps_grid", &self.tuning.dogd_eps_grid),
        ] {
            if self.tuning.enabled && grid.is_empty() {
                return Err(invalid(key, "must not be empty"));
            }
        }
        if let Some(g) = &self.tuning.oracle_grid {
            if g.is_empty() || g.iter().any(|b| !(*b >= 0.0)) {
                return Err(invalid("tuning.oracle_grid", "must be a nonempty list of bids >= 0"));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dotted_keys_and_tables_are_equivalent() {
        let a = ExperimentConfig::from_toml_str("market.mu_r = -2.5\ncampaign.budget = 10").unwrap();
        let b = ExperimentConfig::from_toml_str("[market]\nmu_r = -2.5\n[campaign]\nbudget = 10.0").unwrap();
        assert_eq!(a, b);
        assert_eq!(a.market.utility_mu, -2.5);
        assert_eq!(a.campaign.budget, 10.0);
    }

    #[test]
    fn unknown_key_is_named() {
        let err = ExperimentConfig::from_toml_str("market.mu_x = 1").unwrap_err();
        assert!(matches!(err, ConfigError::UnknownKey(ref k) if k == "market.mu_x"));
        assert!(err.to_string().contains("market.mu_x"));
    }

    #[test]
    fn wrong_type_is_named() {
        let err = ExperimentConfig::from_toml_str("experiment.episodes = \"ten\"").unwrap_err();
        assert!(err.to_string().contains("experiment.episodes"));
    }

    #[test]
    fn overrides_win_and_accept_lists() {
        let mut c = ExperimentConfig::from_toml_str("experiment.seed = 1").unwrap();
        c.apply_override("experiment.seed=9").unwrap();
        c.apply_override("experiment.algorithms=mpc,pid").unwrap();
        c.apply_override("tuning.dogd_eps_grid=[0.1, 1]").unwrap();
        c.apply_override("market.conversion_mode=bernoulli").unwrap();
        assert_eq!(c.seed, 9);
        assert_eq!(c.algorithms, vec![Algorithm::Mpc, Algorithm::Pid]);
        assert_eq!(c.tuning.dogd_eps_grid, vec![0.1, 1.0]);
        assert_eq!(c.market.conversion_mode, ConversionMode::Bernoulli);
        assert!(c.apply_override("no_equals").is_err());
    }

    #[test]
    fn every_documented_key_is_settable() {
        let samples = [
            ("market.conversion_mode", "\"expected\""),
            ("dogd.schedule", "\"constant\""),
            ("experiment.algorithms", "[\"mpc\"]"),
            ("experiment.output_dir", "\"x\""),
            ("mpc.cold_start", "true"),
            ("mpc.jitter", "false"),
            ("tuning.enabled", "true"),
        ];
        for key in KEYS {
            let raw = samples.iter().find(|(k, _)| k == key).map(|(_, v)| *v).unwrap_or("1");
            let mut c = ExperimentConfig::default();
            c.apply_override(&format!("{key}={raw}")).unwrap_or_else(|e| panic!("{key}: {e}"));
        }
    }

    #[test]
    fn validation_catches_bad_values() {
        let mut c = ExperimentConfig::default();
        assert!(c.validate().is_ok());
        c.episodes = 0;
        assert!(c.validate().is_err());
        let mut c = ExperimentConfig::default();
        c.algorithms = vec![Algorithm::MpcCostCap];
        assert!(c.validate().is_err());
        let mut c = ExperimentConfig::default();
        c.sweep_initial_bids = vec![0.1, 0.0];
        assert!(c.validate().is_err());
        let mut c = ExperimentConfig::default();
        c.market.cycle_size = c.market.total_opportunities + 1;
        assert!(c.validate().is_err());
    }
}
