//! Simulation configuration, read from TOML.
//!
//! ```toml
//! dataset = "runs/ml100k/histories.json"
//! epochs = 150
//! window = 20
//! seed = 7
//!
//! [mechanism]
//! strategy = "separate"
//! p = "1/8"
//!
//! [model]
//! kind = "mf"
//! dim = 32
//!
//! [[groups]]
//! label = "non_sensitive"
//! w = 0.0
//! share = "1/3"
//! ```
//!
//! Relative paths inside a config file resolve against the file's directory.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::eval::EvalOptions;
use crate::mechanism::{Granularity, MechanismSpec, Strategy};
use crate::privacy::{validate_groups, GroupSpec};
use crate::recommender::ModelSpec;

/// How the no-disclosure utility is obtained during calibration.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UEmptyMode {
    Zero,
    /// NDCG of the benchmark model's cold-start ranking.
    #[default]
    Popularity,
}

impl FromStr for UEmptyMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "zero" => Ok(UEmptyMode::Zero),
            "popularity" => Ok(UEmptyMode::Popularity),
            other => Err(Error::Config(format!("unknown u_empty_mode `{other}`"))),
        }
    }
}

impl fmt::Display for UEmptyMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            UEmptyMode::Zero => "zero",
            UEmptyMode::Popularity => "popularity",
        })
    }
}

fn default_mechanism() -> MechanismSpec {
    MechanismSpec {
        strategy: Strategy::Separate,
        p: Granularity::segments_of(8).expect("8 segments is valid"),
        attr_mode: Default::default(),
    }
}

fn default_model() -> ModelSpec {
    ModelSpec::Mf(Default::default())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    /// Prepared snapshot (`histories.json`).
    pub dataset: PathBuf,
    #[serde(default = "default_mechanism")]
    pub mechanism: MechanismSpec,
    /// Model retrained every epoch.
    #[serde(default = "default_model")]
    pub model: ModelSpec,
    /// Model used once for calibration.
    #[serde(default = "default_model")]
    pub benchmark: ModelSpec,
    #[serde(default = "GroupSpec::default_groups")]
    pub groups: Vec<GroupSpec>,
    pub epochs: usize,
    #[serde(default = "default_window")]
    pub window: usize,
    #[serde(default)]
    pub eval: EvalOptions,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub u_empty_mode: UEmptyMode,
    /// Cost per disclosed attribute; unset means `1 / pool_len` per user.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    /// Existing calibration file to load instead of calibrating.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub calibration: Option<PathBuf>,
    /// Write every user's action, utility, cost and reward per epoch.
    #[serde(default)]
    pub reward_log: bool,
}

fn default_window() -> usize {
    20
}

impl SimConfig {
    /// Defaults for everything but the dataset path and horizon.
    pub fn new(dataset: impl Into<PathBuf>, epochs: usize) -> Self {
        SimConfig {
            dataset: dataset.into(),
            mechanism: default_mechanism(),
            model: default_model(),
            benchmark: default_model(),
            groups: GroupSpec::default_groups(),
            epochs,
            window: default_window().min(epochs.max(1)),
            eval: EvalOptions::default(),
            seed: 0,
            u_empty_mode: UEmptyMode::default(),
            beta: None,
            calibration: None,
            reward_log: false,
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: SimConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        cfg.dataset = base.join(&cfg.dataset);
        cfg.calibration = cfg.calibration.map(|c| base.join(c));
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.window == 0 || self.window > self.epochs {
            return Err(Error::Config(format!(
                "need epochs >= window >= 1, got epochs = {} and window = {}",
                self.epochs, self.window
            )));
        }
        validate_groups(&self.groups)?;
        self.model.validate()?;
        self.benchmark.validate()?;
        if self.eval.k == 0 {
            return Err(Error::Config("eval k must be at least 1".into()));
        }
        if let Some(b) = self.beta {
            if !(b >= 0.0 && b.is_finite()) {
                return Err(Error::Config(format!("beta must be nonnegative, got {b}")));
            }
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(json))
    }
}
