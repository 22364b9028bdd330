//! Service configuration: a TOML file, then `FAF_*` environment overrides.

use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use faf_core::{AggregationPolicy, Grid};
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("reading {}: {source}", path.display())]
    Read { path: PathBuf, source: std::io::Error },
    #[error("parsing {}: {source}", path.display())]
    Parse { path: PathBuf, source: toml::de::Error },
    #[error("{key}: {message}")]
    Invalid { key: String, message: String },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyName {
    Mean,
    Brier,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub bind: SocketAddr,
    pub store_root: PathBuf,
    /// Forecast grid step.
    pub grid: f64,
    pub policy: PolicyName,
    /// Resolved forecasts each agent needs on record before Brier weighting applies.
    pub brier_activation: usize,
    /// Default per-round deadline, in seconds, for sessions that do not set one.
    pub round_deadline_secs: i64,
    /// Default session lifetime, in days, for sessions created without a deadline.
    pub session_deadline_days: i64,
    /// Write a snapshot after this many events since the last one; 0 disables.
    pub snapshot_every: u64,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            bind: SocketAddr::from(([127, 0, 0, 1], 8080)),
            store_root: PathBuf::from("faf-store"),
            grid: 0.01,
            policy: PolicyName::Brier,
            brier_activation: 1,
            round_deadline_secs: 7 * 24 * 3600,
            session_deadline_days: 90,
            snapshot_every: 64,
        }
    }
}

pub const ENV_KEYS: [&str; 8] = [
    "FAF_BIND",
    "FAF_STORE_ROOT",
    "FAF_GRID",
    "FAF_POLICY",
    "FAF_BRIER_ACTIVATION",
    "FAF_ROUND_DEADLINE_SECS",
    "FAF_SESSION_DEADLINE_DAYS",
    "FAF_SNAPSHOT_EVERY",
];

fn invalid(key: &str, message: impl ToString) -> ConfigError {
    ConfigError::Invalid { key: key.to_string(), message: message.to_string() }
}

impl Config {
    /// Defaults, overlaid by `path` if given, overlaid by the process environment.
    pub fn load(path: Option<&Path>) -> Result<Self, ConfigError> {
        let mut config = match path {
            Some(p) => Self::from_file(p)?,
            None => Config::default(),
        };
        config.apply_env(std::env::vars())?;
        Ok(config)
    }

    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read { path: path.into(), source })?;
        Self::from_toml(&text).map_err(|e| match e {
            ConfigError::Parse { source, .. } => ConfigError::Parse { path: path.into(), source },
            other => other,
        })
    }

    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let config: Config = toml::from_str(text).map_err(|source| ConfigError::Parse { path: PathBuf::new(), source })?;
        config.validate()?;
        Ok(config)
    }

    /// Applies every recognised `FAF_*` variable in `vars`; others are ignored.
    pub fn apply_env(&mut self, vars: impl IntoIterator<Item = (String, String)>) -> Result<(), ConfigError> {
        for (key, value) in vars {
            let parse_err = |e: &dyn std::fmt::Display| invalid(&key, format!("`{value}`: {e}"));
            match key.as_str() {
                "FAF_BIND" => self.bind = value.parse().map_err(|e| parse_err(&e))?,
                "FAF_STORE_ROOT" => self.store_root = PathBuf::from(&value),
                "FAF_GRID" => self.grid = value.parse().map_err(|e| parse_err(&e))?,
                "FAF_POLICY" => {
                    self.policy = match value.as_str() {
                        "mean" => PolicyName::Mean,
                        "brier" => PolicyName::Brier,
                        _ => return Err(parse_err(&"expected mean or brier")),
                    }
                }
                "FAF_BRIER_ACTIVATION" => self.brier_activation = value.parse().map_err(|e| parse_err(&e))?,
                "FAF_ROUND_DEADLINE_SECS" => self.round_deadline_secs = value.parse().map_err(|e| parse_err(&e))?,
                "FAF_SESSION_DEADLINE_DAYS" => self.session_deadline_days = value.parse().map_err(|e| parse_err(&e))?,
                "FAF_SNAPSHOT_EVERY" => self.snapshot_every = value.parse().map_err(|e| parse_err(&e))?,
                _ => {}
            }
        }
        self.validate()
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        Grid::from_step(self.grid).map_err(|e| invalid("grid", e))?;
        if self.round_deadline_secs <= 0 {
            return Err(invalid("round_deadline_secs", "must be positive"));
        }
        if self.session_deadline_days <= 0 {
            return Err(invalid("session_deadline_days", "must be positive"));
        }
        Ok(())
    }

    pub fn grid(&self) -> Grid {
        Grid::from_step(self.grid).expect("validated")
    }

    pub fn policy(&self) -> AggregationPolicy {
        match self.policy {
            PolicyName::Mean => AggregationPolicy::Mean,
            PolicyName::Brier => AggregationPolicy::Brier { activation: self.brier_activation },
        }
    }
}
