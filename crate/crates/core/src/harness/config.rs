//! JSON experiment configuration.
//!
//! Unknown keys are hard errors: a typo in `alpha` or `k_train` silently
//! changing an experiment is worse than a parse failure.

use crate::net::{Activation, MlpArchitecture};
use crate::{Error, Result};
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Serialize, Deserialize, Debug, Clone, Copy, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Regression,
    Classification,
}

#[derive(Serialize, Deserialize, Debug, Clone, PartialEq)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetConfig {
    /// Numeric CSV; last column is the regression target.
    Csv { path: String },
    /// IDX image/label pairs (big-endian headers, pixels scaled to [0,1]).
    Idx {
        train_images: String,
        train_labels: String,
        test_images: String,
        test_labels: String,
        #[serde(default)]
        limit_train: Option<usize>,
        #[serde(default)]
        limit_test: Option<usize>,
    },
}

impl DatasetConfig {
    pub fn referenced_paths(&self) -> Vec<&str> {
        match self {
            DatasetConfig::Csv { path } => vec![path],
            DatasetConfig::Idx { train_images, train_labels, test_images, test_labels, .. } => {
                vec![train_images, train_labels, test_images, test_labels]
            }
        }
    }

    pub fn check_files_exist(&self) -> Result<()> {
        for p in self.referenced_paths() {
            if !Path::new(p).is_file() {
                return Err(Error::Config(format!("dataset file not found: {p}")));
            }
        }
        Ok(())
    }
}

#[derive(Serialize, Deserialize, Debug, Clone, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ArchitectureConfig {
    /// Hidden layer widths; input/output widths come from the data.
    pub hidden: Vec<usize>,
    pub activation: Activation,
    /// One rate per weight layer, applied to that layer's input units.
    pub dropout: Vec<f64>,
}

impl ArchitectureConfig {
    pub fn build(&self, d_in: usize, d_out: usize) -> Result<MlpArchitecture> {
        let mut widths = Vec::with_capacity(self.hidden.len() + 2);
        widths.push(d_in);
        widths.extend_from_slice(&self.hidden);
        widths.push(d_out);
        let activations = vec![self.activation; self.hidden.len()];
        MlpArchitecture::new(widths, activations, self.dropout.clone())
    }
}

fn default_tau_grid() -> Vec<f64> {
    vec![0.1, 0.5, 1.0, 2.0, 5.0, 10.0]
}

fn default_true() -> bool {
    true
}

#[derive(Serialize, Deserialize, Debug, Clone, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ObjectiveSettings {
    pub alpha: f64,
    pub k_train: usize,
    /// Observation precision; when absent a grid search on a validation
    /// split of the first data split picks it.
    #[serde(default)]
    pub tau: Option<f64>,
    #[serde(default = "default_tau_grid")]
    pub tau_grid: Vec<f64>,
    pub weight_decay: f64,
    #[serde(default = "default_true")]
    pub include_likelihood_constant: bool,
}

#[derive(Serialize, Deserialize, Debug, Clone, Copy, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Adam,
    SgdMomentum,
}

fn default_momentum() -> f64 {
    0.9
}

#[derive(Serialize, Deserialize, Debug, Clone, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    #[serde(default = "default_momentum")]
    pub momentum: f64,
}

#[derive(Serialize, Deserialize, Debug, Clone, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct SplitConfig {
    /// Number of random train/test splits; defaults to 20 below 2000 points
    /// and 5 otherwise.
    #[serde(default)]
    pub n_splits: Option<usize>,
    pub test_fraction: f64,
}

#[derive(Serialize, Deserialize, Debug, Clone, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub task: Task,
    pub dataset: DatasetConfig,
    pub architecture: ArchitectureConfig,
    pub objective: ObjectiveSettings,
    pub optimizer: OptimizerConfig,
    #[serde(default)]
    pub split: Option<SplitConfig>,
    pub k_test: usize,
    #[serde(default)]
    pub threads: Option<usize>,
}

#[derive(Serialize, Deserialize, Debug, Clone, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct EvaluateConfig {
    pub checkpoint: String,
    pub dataset: DatasetConfig,
    pub k_test: usize,
    #[serde(default)]
    pub threads: Option<usize>,
}

#[derive(Serialize, Deserialize, Debug, Clone, PartialEq)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum AttackSpecConfig {
    FgsUntargeted { eta_grid: Vec<f64> },
    TargetedIterative { target_class: usize, eta: f64, steps: Vec<usize> },
}

#[derive(Serialize, Deserialize, Debug, Clone, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct AttackRunConfig {
    pub checkpoint: String,
    pub dataset: DatasetConfig,
    pub attack: AttackSpecConfig,
    pub k_attack: usize,
    pub k_test: usize,
    /// Evaluation points taken from the head of the test set.
    pub n_eval: usize,
    #[serde(default)]
    pub threads: Option<usize>,
}

#[derive(Serialize, Deserialize, Debug, Clone, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct BenchmarkConfig {
    pub base: ExperimentConfig,
    pub k_values: Vec<usize>,
}

pub fn load_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k_test == 0 || self.objective.k_train == 0 {
            return Err(Error::Config("K and K_test must be >= 1".into()));
        }
        if self.optimizer.epochs == 0 {
            return Err(Error::Config("epochs must be >= 1".into()));
        }
        if self.optimizer.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if let Some(split) = &self.split {
            if !(split.test_fraction > 0.0 && split.test_fraction < 1.0) {
                return Err(Error::Config("test_fraction must lie in (0, 1)".into()));
            }
        }
        if self.architecture.dropout.len() != self.architecture.hidden.len() + 1 {
            return Err(Error::Config(format!(
                "dropout needs {} entries (one per weight layer), got {}",
                self.architecture.hidden.len() + 1,
                self.architecture.dropout.len()
            )));
        }
        match (self.task, &self.dataset) {
            (Task::Regression, DatasetConfig::Csv { .. }) => {}
            (Task::Classification, DatasetConfig::Idx { .. }) => {}
            _ => {
                return Err(Error::Config(
                    "regression expects a csv dataset, classification an idx dataset".into(),
                ))
            }
        }
        Ok(())
    }

    /// FNV-1a hash of the canonical JSON encoding; stored in checkpoints so
    /// an evaluation can detect a config/model mismatch.
    pub fn config_hash(&self) -> u64 {
        let text = serde_json::to_string(self).expect("config serialises");
        fnv1a(text.as_bytes())
    }
}

pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x0000_0100_0000_01B3);
    }
    hash
}
