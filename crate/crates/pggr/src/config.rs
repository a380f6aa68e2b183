//! TOML experiment files.
//!
//! ```toml
//! [experiment]
//! method = "pggr"
//! n_rep = 50
//! seed = 1
//! reference = 1.21e-6
//!
//! [problem]
//! name = "four_mode"
//!
//! [ice]
//! beta = 1.0
//! ```
//!
//! `[ice]` keys override the named problem's defaults. Overrides given as
//! `section.key=value` are applied before validation.

use std::path::{Path, PathBuf};

use pggr_core::{IceConfig, Method, ProblemSpec};
use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use crate::harness::RunSpec;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },

    #[error("{0}")]
    Parse(String),

    #[error("missing required field `{0}`")]
    Missing(&'static str),

    #[error("bad override '{0}': expected section.key=value")]
    Override(String),

    #[error("invalid configuration: {0}")]
    Invalid(String),
}

fn default_n_rep() -> usize {
    50
}

fn default_cmc_samples() -> u64 {
    1_000_000
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSection {
    pub method: Method,
    #[serde(default = "default_n_rep")]
    pub n_rep: usize,
    #[serde(default)]
    pub seed: u64,
    pub reference: Option<f64>,
    #[serde(default = "default_cmc_samples")]
    pub cmc_samples: u64,
    /// Output directory; the command line takes precedence.
    pub out: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub experiment: ExperimentSection,
    pub problem: ProblemSpec,
    pub ice: IceConfig,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct Raw {
    experiment: ExperimentSection,
    problem: ProblemSpec,
    #[serde(default)]
    ice: Table,
}

impl ExperimentConfig {
    pub fn load(path: &Path, overrides: &[String]) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(&text, overrides).map_err(|e| match e {
            ConfigError::Parse(msg) => ConfigError::Parse(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn parse(text: &str, overrides: &[String]) -> Result<Self, ConfigError> {
        let mut table: Table = text.parse().map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))?;
        let has_name = table
            .get("problem")
            .and_then(Value::as_table)
            .is_some_and(|p| p.contains_key("name"));
        if !has_name && !overrides.iter().any(|o| o.trim_start().starts_with("problem.name")) {
            return Err(ConfigError::Missing("problem.name"));
        }
        let raw: Raw = if overrides.is_empty() {
            toml::from_str(text)
        } else {
            for o in overrides {
                apply_override(&mut table, o)?;
            }
            let rewritten = toml::to_string(&table).map_err(|e| ConfigError::Parse(e.to_string()))?;
            toml::from_str(&rewritten)
        }
        .map_err(|e| ConfigError::Parse(e.to_string()))?;

        let mut ice = Table::try_from(IceConfig::for_problem(raw.problem.name()))
            .map_err(|e| ConfigError::Parse(e.to_string()))?;
        ice.extend(raw.ice);
        let ice: IceConfig = Value::Table(ice)
            .try_into()
            .map_err(|e: toml::de::Error| ConfigError::Parse(format!("in [ice]: {}", e.message())))?;
        let cfg = ExperimentConfig {
            experiment: raw.experiment,
            problem: raw.problem,
            ice,
        };
        cfg.run_spec()
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(cfg)
    }

    pub fn run_spec(&self) -> RunSpec {
        RunSpec {
            problem: self.problem.clone(),
            method: self.experiment.method,
            ice: self.ice.clone(),
            n_rep: self.experiment.n_rep,
            base_seed: self.experiment.seed,
            reference: self.experiment.reference,
            cmc_samples: self.experiment.cmc_samples,
        }
    }
}

fn apply_override(table: &mut Table, spec: &str) -> Result<(), ConfigError> {
    let bad = || ConfigError::Override(spec.to_string());
    let (path, value) = spec.split_once('=').ok_or_else(bad)?;
    let keys: Vec<&str> = path.trim().split('.').collect();
    if keys.len() < 2 || keys.iter().any(|k| k.is_empty()) {
        return Err(bad());
    }
    let value = parse_value(value.trim());
    let mut node = table;
    for k in &keys[..keys.len() - 1] {
        node = node
            .entry(k.to_string())
            .or_insert_with(|| Value::Table(Table::new()))
            .as_table_mut()
            .ok_or_else(bad)?;
    }
    node.insert(keys[keys.len() - 1].to_string(), value);
    Ok(())
}

/// A TOML literal, or the raw text as a string.
fn parse_value(text: &str) -> Value {
    format!("v = {text}")
        .parse::<Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(text.to_string()))
}
