use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::datagen::GroundTruth;
use crate::error::{Error, Result};
use crate::trainers::{Algorithm, TrainerConfig};

/// Where the examples come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Source {
    /// `n` training examples from `ground_truth`; test examples are drawn separately.
    Synthetic { ground_truth: GroundTruth, n: usize },
    /// A numeric CSV file. `exclude` lists columns that are neither features
    /// nor the target (for example a second target).
    Csv {
        path: PathBuf,
        target: String,
        #[serde(default)]
        exclude: Vec<String>,
    },
}

/// How `delta` is chosen from the training-set size `N`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DeltaRule {
    Fixed { delta: f64 },
    /// `delta = N^-power`.
    NPower { power: f64 },
}

impl Default for DeltaRule {
    fn default() -> Self {
        DeltaRule::NPower { power: 1.1 }
    }
}

impl DeltaRule {
    pub fn delta(&self, n: usize) -> Result<f64> {
        let delta = match *self {
            DeltaRule::Fixed { delta } => delta,
            DeltaRule::NPower { power } => (n as f64).powf(-power),
        };
        if !(delta > 0.0 && delta < 1.0) {
            return Err(Error::invalid(format!("delta rule gives {delta}, outside (0, 1)")));
        }
        Ok(delta)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    /// Monte-Carlo draws for the synthetic excess risk.
    pub mc_samples: usize,
    pub test_fraction: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            mc_samples: 100_000,
            test_fraction: 0.2,
        }
    }
}

/// A full experiment grid: algorithms x epsilons x seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub source: Source,
    pub algorithms: Vec<Algorithm>,
    pub epsilons: Vec<f64>,
    #[serde(default)]
    pub delta_rule: DeltaRule,
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub trainer: TrainerConfig,
    /// Replaces `trainer` for the named algorithms (for example a different step size).
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub trainer_overrides: BTreeMap<Algorithm, TrainerConfig>,
    #[serde(default)]
    pub eval: EvalConfig,
    /// Size of the public estimating set used by DP-GLMtron (defaults to `trainer.estimating`).
    #[serde(default)]
    pub public_size: Option<usize>,
    /// Constant in the shuffle-regime multiplier.
    #[serde(default = "default_c3")]
    pub c3: f64,
    /// Derive `trace_h` and the search range from the data when set; use
    /// `trainer` verbatim otherwise.
    #[serde(default = "default_true")]
    pub auto_constants: bool,
    /// Standardise features and normalise targets (CSV sources only).
    #[serde(default = "default_true")]
    pub preprocess: bool,
}

fn default_c3() -> f64 {
    1.0
}

fn default_true() -> bool {
    true
}

impl ExperimentConfig {
    /// A synthetic grid with defaults for everything else.
    pub fn synthetic(ground_truth: GroundTruth, n: usize) -> Self {
        Self {
            source: Source::Synthetic { ground_truth, n },
            algorithms: vec![Algorithm::DpMbglmtron],
            epsilons: vec![0.05, 0.2, 0.5],
            delta_rule: DeltaRule::default(),
            seeds: (0..5).collect(),
            trainer: TrainerConfig::default(),
            trainer_overrides: BTreeMap::new(),
            eval: EvalConfig::default(),
            public_size: None,
            c3: default_c3(),
            auto_constants: true,
            preprocess: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.algorithms.is_empty() || self.seeds.is_empty() {
            return Err(Error::invalid("a grid needs at least one algorithm and one seed"));
        }
        if self.algorithms.iter().any(|a| a.is_private()) && self.epsilons.is_empty() {
            return Err(Error::invalid("private algorithms need at least one epsilon"));
        }
        if let Some(e) = self.epsilons.iter().find(|e| !(**e > 0.0 && e.is_finite())) {
            return Err(Error::invalid(format!("epsilon must be positive, got {e}")));
        }
        if !(self.eval.test_fraction > 0.0 && self.eval.test_fraction < 1.0) {
            return Err(Error::invalid("test fraction must lie in (0, 1)"));
        }
        if self.eval.mc_samples == 0 {
            return Err(Error::invalid("mc_samples must be positive"));
        }
        if self.public_size == Some(0) {
            return Err(Error::invalid("public_size must be positive"));
        }
        if !(self.c3 > 0.0) {
            return Err(Error::invalid("c3 must be positive"));
        }
        if let Source::Synthetic { n, .. } = &self.source {
            if *n == 0 {
                return Err(Error::invalid("synthetic n must be positive"));
            }
        }
        self.trainer.validate()?;
        self.trainer_overrides.values().try_for_each(TrainerConfig::validate)
    }

    /// Trainer settings for `algorithm`, honouring overrides.
    pub fn trainer_for(&self, algorithm: Algorithm) -> &TrainerConfig {
        self.trainer_overrides.get(&algorithm).unwrap_or(&self.trainer)
    }

    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: Self = serde_json::from_str(&text)?;
        Ok(cfg)
    }
}
