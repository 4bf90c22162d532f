//! Run configuration: one TOML file describing the dataset, split,
//! training, and distillation stages.
//!
//! Every field has a default except the dataset source, so a minimal
//! config is just a `[dataset]` table. Unknown keys are rejected, ranges
//! are validated before any work starts, and the effective (fully
//! defaulted) config is echoed into `results.json` so each run describes
//! itself.

use std::fs;
use std::path::{Path, PathBuf};

use fedistill_core::data::{synth_gaussian, Dataset};
use fedistill_core::distill::{DistillConfig, InitMode, KlDirection, Objective};
use fedistill_core::fedsim::{FedConfig, SnapshotPolicy};
use fedistill_core::model::Hyper;
use fedistill_core::split::{SplitSpec, Strategy};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};
use crate::idx;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_seed")]
    pub seed: u64,
    /// Independent experiment repetitions averaged in the report.
    #[serde(default = "default_repetitions")]
    pub repetitions: u32,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    pub dataset: DatasetConfig,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub split: SplitConfig,
    #[serde(default)]
    pub fed: FedSection,
    #[serde(default)]
    pub hyper: Hyper,
    #[serde(default)]
    pub distill: DistillSection,
}

fn default_seed() -> u64 {
    42
}

fn default_repetitions() -> u32 {
    5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "lowercase", deny_unknown_fields)]
pub enum DatasetConfig {
    /// Seeded Gaussian blobs; no downloads required.
    Synthetic {
        #[serde(default = "default_classes")]
        num_classes: usize,
        #[serde(default = "default_per_class")]
        per_class: usize,
        #[serde(default = "default_dim")]
        dim: usize,
        #[serde(default = "default_spread")]
        spread: f64,
    },
    /// An IDX image/label file pair.
    Idx {
        images: PathBuf,
        labels: PathBuf,
        #[serde(default)]
        num_classes: Option<usize>,
        /// Scale pixel bytes to `[0,1]`.
        #[serde(default = "default_true")]
        normalize: bool,
    },
}

fn default_classes() -> usize {
    10
}

fn default_per_class() -> usize {
    150
}

fn default_dim() -> usize {
    2
}

fn default_spread() -> f64 {
    0.3
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    /// Hidden-layer widths of the MLP; input/output sizes come from the
    /// dataset.
    pub hidden: Vec<usize>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self { hidden: vec![100] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitConfig {
    #[serde(default = "default_strategy")]
    pub strategy: Strategy,
    #[serde(default = "default_clients")]
    pub clients: usize,
    #[serde(default = "default_k_overlap")]
    pub k_overlap: usize,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default)]
    pub mu: f64,
    #[serde(default = "default_sigma")]
    pub sigma: f64,
}

fn default_strategy() -> Strategy {
    Strategy::Ds1
}

fn default_clients() -> usize {
    10
}

fn default_k_overlap() -> usize {
    4
}

fn default_alpha() -> f64 {
    0.9
}

fn default_sigma() -> f64 {
    2.0
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            strategy: default_strategy(),
            clients: default_clients(),
            k_overlap: default_k_overlap(),
            alpha: default_alpha(),
            mu: 0.0,
            sigma: default_sigma(),
        }
    }
}

impl SplitConfig {
    pub fn to_spec(&self, seed: u64) -> SplitSpec {
        SplitSpec {
            strategy: self.strategy,
            clients: self.clients,
            k_overlap: self.k_overlap,
            alpha: self.alpha,
            mu: self.mu,
            sigma: self.sigma,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FedSection {
    #[serde(default = "default_rounds")]
    pub rounds: u32,
    #[serde(default = "default_policy")]
    pub snapshot_policy: SnapshotPolicy,
    #[serde(default)]
    pub weight_by_samples: bool,
}

fn default_rounds() -> u32 {
    20
}

fn default_policy() -> SnapshotPolicy {
    SnapshotPolicy::EveryRound
}

impl Default for FedSection {
    fn default() -> Self {
        Self {
            rounds: default_rounds(),
            snapshot_policy: default_policy(),
            weight_by_samples: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DistillSection {
    /// Defaults to λ ∈ {0, 0.05, ..., 0.95}.
    #[serde(default)]
    pub lambda_grid: Option<Vec<f64>>,
    /// Defaults to T ∈ {1, 2, 4, 8, 12, 16, 20, 25}.
    #[serde(default)]
    pub t_grid: Option<Vec<f64>>,
    #[serde(default = "default_epochs")]
    pub epochs: u32,
    #[serde(default = "default_objective")]
    pub objective: Objective,
    #[serde(default = "default_init_mode")]
    pub init_mode: InitMode,
    #[serde(default = "default_kl_direction")]
    pub kl_direction: KlDirection,
}

fn default_epochs() -> u32 {
    5
}

fn default_objective() -> Objective {
    Objective::Kl
}

fn default_init_mode() -> InitMode {
    InitMode::OptimalTeacher
}

fn default_kl_direction() -> KlDirection {
    KlDirection::TeacherRef
}

impl Default for DistillSection {
    fn default() -> Self {
        Self {
            lambda_grid: None,
            t_grid: None,
            epochs: default_epochs(),
            objective: default_objective(),
            init_mode: default_init_mode(),
            kl_direction: default_kl_direction(),
        }
    }
}

impl RunConfig {
    pub fn from_path(path: &Path) -> Result<Self> {
        let text =
            fs::read_to_string(path).map_err(|e| CliError::io(path.display().to_string(), e))?;
        let cfg: RunConfig = toml::from_str(&text)
            .map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.repetitions == 0 {
            return Err(CliError::config("repetitions must be at least 1"));
        }
        if self.model.hidden.contains(&0) {
            return Err(CliError::config("hidden layer widths must be positive"));
        }
        match &self.dataset {
            DatasetConfig::Synthetic {
                num_classes,
                per_class,
                dim,
                spread,
            } => {
                if *num_classes == 0 || *per_class == 0 || *dim == 0 {
                    return Err(CliError::config(
                        "synthetic dataset needs positive num_classes, per_class, dim",
                    ));
                }
                if !(*spread > 0.0) {
                    return Err(CliError::config("synthetic spread must be positive"));
                }
            }
            DatasetConfig::Idx { .. } => {}
        }
        self.hyper
            .validate()
            .map_err(|e| CliError::config(e.to_string()))?;
        self.fed_config(0)
            .validate()
            .map_err(|e| CliError::config(e.to_string()))?;
        self.distill_config()
            .validate()
            .map_err(|e| CliError::config(e.to_string()))?;
        Ok(())
    }

    /// Loads or generates the dataset.
    pub fn load_dataset(&self) -> Result<Dataset> {
        match &self.dataset {
            DatasetConfig::Synthetic {
                num_classes,
                per_class,
                dim,
                spread,
            } => Ok(synth_gaussian(
                *num_classes,
                *per_class,
                *dim,
                *spread,
                self.seed,
            )?),
            DatasetConfig::Idx {
                images,
                labels,
                num_classes,
                normalize,
            } => idx::load_idx(images, labels, *num_classes, *normalize),
        }
    }

    pub fn split_spec(&self) -> SplitSpec {
        self.split.to_spec(self.seed)
    }

    /// Stage-1 config; `seed` differs per repetition.
    pub fn fed_config(&self, seed: u64) -> FedConfig {
        FedConfig {
            rounds: self.fed.rounds,
            hyper: self.hyper,
            clients: self.split.clients,
            seed,
            snapshot_policy: self.fed.snapshot_policy,
            weight_by_samples: self.fed.weight_by_samples,
        }
    }

    pub fn distill_config(&self) -> DistillConfig {
        let defaults = DistillConfig::default();
        DistillConfig {
            lambda_grid: self
                .distill
                .lambda_grid
                .clone()
                .unwrap_or(defaults.lambda_grid),
            t_grid: self.distill.t_grid.clone().unwrap_or(defaults.t_grid),
            epochs: self.distill.epochs,
            objective: self.distill.objective,
            init_mode: self.distill.init_mode,
            kl_direction: self.distill.kl_direction,
            hyper: self.hyper,
        }
    }
}
