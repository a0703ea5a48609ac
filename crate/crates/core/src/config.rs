//! Run configuration files (TOML).
//!
//! ```toml
//! suite = "train.json"
//! holdout = "holdout.json"
//! output_dir = "out"
//!
//! [target]
//! paths = ["loop_order.trace"]
//! strip_policy = "none"
//!
//! [driver]
//! kind = "sim"            # or "external"
//! access_limit = 65536
//!
//! [search]
//! seed = 7
//!
//! [operators]
//! weights = [1.0, 1.0, 1.0]
//! ```
//!
//! Relative paths resolve against the directory holding the config file.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::drivers::{ExternalDriverConfig, SimDriverConfig};
use crate::operators::OperatorWeights;
use crate::search_engine::SearchConfig;
use crate::source_model::StripPolicy;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetConfig {
    pub paths: Vec<PathBuf>,
    #[serde(default)]
    pub strip_policy: StripPolicy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DriverConfig {
    Sim(SimDriverConfig),
    External(ExternalDriverConfig),
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OperatorsConfig {
    #[serde(default)]
    pub weights: OperatorWeights,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub target: TargetConfig,
    pub driver: DriverConfig,
    pub suite: PathBuf,
    #[serde(default)]
    pub holdout: Option<PathBuf>,
    #[serde(default)]
    pub search: SearchConfig,
    #[serde(default)]
    pub operators: OperatorsConfig,
    pub output_dir: PathBuf,
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("config {path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("config {config}: {what} {path} does not exist")]
    Missing {
        config: PathBuf,
        what: &'static str,
        path: PathBuf,
    },
    #[error("config {path}: {message}")]
    Invalid { path: PathBuf, message: String },
}

impl RunConfig {
    pub fn parse(text: &str, path: &Path) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError::Parse {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }

    /// Reads, resolves relative paths, and checks that referenced files
    /// exist.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        let mut config = Self::parse(&text, path)?;
        let base = path.parent().unwrap_or(Path::new("."));
        config.resolve(base);
        config.check(path)?;
        Ok(config)
    }

    fn resolve(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        self.target.paths.iter_mut().for_each(fix);
        fix(&mut self.suite);
        if let Some(h) = &mut self.holdout {
            fix(h);
        }
        fix(&mut self.output_dir);
    }

    fn check(&self, path: &Path) -> Result<(), ConfigError> {
        let missing = |what, p: &Path| ConfigError::Missing {
            config: path.to_path_buf(),
            what,
            path: p.to_path_buf(),
        };
        let invalid = |message: String| ConfigError::Invalid {
            path: path.to_path_buf(),
            message,
        };
        if self.target.paths.is_empty() {
            return Err(invalid("target.paths is empty".into()));
        }
        for p in &self.target.paths {
            if !p.is_file() {
                return Err(missing("target file", p));
            }
        }
        if !self.suite.is_file() {
            return Err(missing("suite", &self.suite));
        }
        if let Some(h) = &self.holdout {
            if !h.is_file() {
                return Err(missing("holdout suite", h));
            }
        }
        self.search.validate().map_err(|e| invalid(e.to_string()))?;
        if !self.operators.weights.is_valid() {
            return Err(invalid("operators.weights must be non-negative with a positive sum".into()));
        }
        if let DriverConfig::Sim(sim) = &self.driver {
            sim.cache.validate().map_err(|e| invalid(e.to_string()))?;
            if sim.access_limit == 0 {
                return Err(invalid("driver.access_limit must be at least 1".into()));
            }
        }
        Ok(())
    }
}
