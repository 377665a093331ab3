//! Experiment configuration: JSON with strict unknown-field rejection,
//! exhaustive validation, and a canonical content hash that is stable
//! under field reordering of the file.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use oko_core::datasets::DistributionSpec;
use oko_core::losses::{LossKind, LossSpec};
use oko_core::model::TrainMethod;

use crate::CliError;

/// Where the data comes from.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSource {
    /// Synthetic Gaussian blobs generated from the config hash.
    Blobs {
        classes: usize,
        per_class: usize,
        dim: usize,
        separation: f64,
    },
    /// IDX image/label files; the official test pair is used as the
    /// shared test split when provided, otherwise the train pair is
    /// split by `test_fraction`.
    Idx {
        train_images: PathBuf,
        train_labels: PathBuf,
        #[serde(default)]
        test_images: Option<PathBuf>,
        #[serde(default)]
        test_labels: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 32,
            learning_rate: 0.05,
            momentum: 0.9,
        }
    }
}

fn default_k() -> usize {
    1
}

fn default_true() -> bool {
    true
}

fn default_aux_weight() -> f64 {
    1.0
}

fn default_temperature() -> f64 {
    2.0
}

fn default_bins() -> usize {
    oko_core::calibration::DEFAULT_BINS
}

fn default_test_fraction() -> f64 {
    0.2
}

fn default_hidden() -> Vec<usize> {
    vec![64, 64]
}

/// Full experiment description. Unknown fields are rejected so a typo
/// cannot silently change a comparison.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetSource,
    #[serde(default)]
    pub distribution: DistributionSpec,
    pub methods: Vec<TrainMethod>,
    /// Per-method loss overrides; a missing entry takes the method's
    /// default.
    #[serde(default)]
    pub loss_overrides: BTreeMap<TrainMethod, LossSpec<f64>>,
    #[serde(default = "default_k")]
    pub k: usize,
    pub train_sizes: Vec<usize>,
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
    #[serde(default = "default_hidden")]
    pub hidden: Vec<usize>,
    /// Train the odd-class head alongside the pair loss (k = 1 only).
    #[serde(default = "default_true")]
    pub aux_odd_head: bool,
    #[serde(default = "default_aux_weight")]
    pub aux_weight: f64,
    /// Evaluation temperature for the temperature-scaled method.
    #[serde(default = "default_temperature")]
    pub temperature: f64,
    #[serde(default = "default_bins")]
    pub ece_bins: usize,
    /// Held-out fraction when the dataset has no official test files.
    #[serde(default = "default_test_fraction")]
    pub test_fraction: f64,
    pub output_dir: PathBuf,
}

impl ExperimentConfig {
    pub fn from_path(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        let cfg: Self =
            serde_json::from_str(&text).map_err(|e| CliError::Validation(vec![e.to_string()]))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Collects every violation instead of stopping at the first.
    pub fn validate(&self) -> Result<(), CliError> {
        let mut problems = Vec::new();
        if self.methods.is_empty() {
            problems.push("methods must be non-empty".to_string());
        }
        if self.seeds.is_empty() {
            problems.push("seeds must be non-empty".to_string());
        }
        if self.train_sizes.is_empty() {
            problems.push("train_sizes must be non-empty".to_string());
        }
        if self.train_sizes.iter().any(|&s| s == 0) {
            problems.push("train_sizes must be positive".to_string());
        }
        if self.k == 0 {
            problems.push("k must be at least 1".to_string());
        }
        if self.aux_odd_head && self.k != 1 && self.methods.contains(&TrainMethod::Oko) {
            problems.push(format!(
                "the auxiliary odd-class head requires k = 1, got k = {}",
                self.k
            ));
        }
        if !(self.temperature > 0.0) {
            problems.push(format!("temperature {} must be positive", self.temperature));
        }
        if self.ece_bins == 0 {
            problems.push("ece_bins must be at least 1".to_string());
        }
        if !(0.0 < self.test_fraction && self.test_fraction < 1.0) {
            problems.push(format!(
                "test_fraction {} must lie in (0, 1)",
                self.test_fraction
            ));
        }
        if self.hidden.iter().any(|&h| h == 0) {
            problems.push("hidden widths must be positive".to_string());
        }
        if !(self.optimizer.learning_rate > 0.0) {
            problems.push("learning_rate must be positive".to_string());
        }
        if !(0.0..1.0).contains(&self.optimizer.momentum) {
            problems.push("momentum must lie in [0, 1)".to_string());
        }
        if self.optimizer.batch_size == 0 {
            problems.push("batch_size must be positive".to_string());
        }
        match &self.dataset {
            DatasetSource::Blobs {
                classes,
                per_class,
                dim,
                separation,
            } => {
                if *classes < 2 {
                    problems.push("blobs need at least 2 classes".to_string());
                }
                if *per_class == 0 || *dim == 0 {
                    problems.push("blobs per_class and dim must be positive".to_string());
                }
                if !(*separation > 0.0) {
                    problems.push("blobs separation must be positive".to_string());
                }
            }
            DatasetSource::Idx {
                test_images,
                test_labels,
                ..
            } => {
                if test_images.is_some() != test_labels.is_some() {
                    problems.push(
                        "idx test_images and test_labels must be provided together".to_string(),
                    );
                }
            }
        }
        if let DistributionSpec::HeavyTailed {
            head_mass,
            head_classes,
        } = self.distribution
        {
            if !(0.0 < head_mass && head_mass < 1.0) {
                problems.push(format!("head_mass {head_mass} must lie in (0, 1)"));
            }
            if head_classes == 0 {
                problems.push("head_classes must be positive".to_string());
            }
        }
        for (method, loss) in &self.loss_overrides {
            let set_loss = matches!(loss.kind, LossKind::OkoHard | LossKind::OkoSoft);
            let is_oko = *method == TrainMethod::Oko;
            if set_loss != is_oko {
                problems.push(format!(
                    "loss override {:?} is incompatible with method {:?}",
                    loss.kind, method
                ));
            }
            if !(0.0..1.0).contains(&loss.alpha) {
                problems.push(format!("smoothing mass {} must lie in [0, 1)", loss.alpha));
            }
            if loss.gamma < 0.0 {
                problems.push(format!("focal exponent {} must be non-negative", loss.gamma));
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(CliError::Validation(problems))
        }
    }

    /// Hash of the canonical serialization of the parsed config: the
    /// same logical config hashes identically however the file orders
    /// its fields.
    pub fn content_hash(&self) -> String {
        let canonical = serde_json::to_string(self).expect("config serializes");
        let digest = Sha256::digest(canonical.as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    /// 64-bit seed derived from the content hash; drives the shared
    /// dataset generation and test split so every method sees the same
    /// evaluation data.
    pub fn hash_seed(&self) -> u64 {
        let digest = Sha256::digest(self.content_hash().as_bytes());
        u64::from_be_bytes(digest[..8].try_into().expect("8 bytes"))
    }
}
