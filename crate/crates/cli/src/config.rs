//! Experiment configuration (TOML).
//!
//! ```toml
//! seed = 1
//!
//! [dataset]
//! kind = "mnist"                     # or "cifar10"
//! train_images = "../data/mnist/train-images-idx3-ubyte"
//! train_labels = "../data/mnist/train-labels-idx1-ubyte"
//! test_images = "../data/mnist/t10k-images-idx3-ubyte"
//! test_labels = "../data/mnist/t10k-labels-idx1-ubyte"
//! # cifar10 instead lists binary batch files:
//! # train_batches = ["data_batch_1.bin", ...]
//! # test_batches = ["test_batch.bin"]
//! train_limit = 10000                # optional: first N items only
//! test_limit = 2000
//! zca = false                        # default: true for cifar10
//!
//! [architecture]
//! preset = "mnist_cnn"               # or: layers = ["fc128", "relu", "fc10", "softmax"]
//!
//! [train]
//! epochs = 30
//! batch_size = 100
//! initial_lr = 0.03125
//! lr_decay = 0.9993
//! momentum = 0.9
//! l2 = 5e-7
//! augment = true
//! class_distinctive = false
//! validation_fraction = 0.1          # optional
//!
//! [deform]
//! preset = "standard"                   # or "identity", or explicit `sets`
//!
//! [[decision]]
//! rule = "apac_log_mean"             # softmax_sum, non_apac
//! m = 64
//!
//! [sweep]
//! m_list = [1, 4, 16, 64, 256]
//! rules = ["apac_log_mean"]
//!
//! [output]
//! dir = "../runs/desk"
//! ```
//!
//! Relative paths resolve against the directory holding the config file.

use std::path::{Path, PathBuf};

use apac_core::dataio::DatasetKind;
use apac_core::decision::{DecisionConfig, Rule};
use apac_core::nn::presets::Architecture;
use apac_core::nn::LayerSpec;
use apac_core::optim::OptimConfig;
use apac_core::sampler::{default_spec, identity_spec, DeformSet, DeformSpec};
use apac_core::trainer::TrainConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;

pub const DEFAULT_M_LIST: [usize; 8] = [1, 4, 16, 64, 256, 1024, 4096, 16384];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub dataset: DatasetSection,
    pub architecture: ArchitectureSection,
    pub train: TrainSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub deform: Option<DeformSection>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub decision: Vec<DecisionSection>,
    #[serde(default)]
    pub sweep: SweepSection,
    #[serde(default)]
    pub output: OutputSection,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSection {
    pub kind: DatasetKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train_images: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train_labels: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test_images: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test_labels: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub train_batches: Vec<PathBuf>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub test_batches: Vec<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train_limit: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test_limit: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub zca: Option<bool>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchitectureSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preset: Option<Architecture>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub layers: Option<Vec<LayerSpec>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub epochs: u64,
    pub batch_size: usize,
    pub initial_lr: f64,
    pub lr_decay: f64,
    pub momentum: f64,
    pub l2: f64,
    #[serde(default)]
    pub augment: bool,
    #[serde(default)]
    pub class_distinctive: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub validation_fraction: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeformPreset {
    /// The experiment PDFs for the dataset kind.
    Standard,
    /// Delta PDFs at the identity.
    Identity,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeformSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preset: Option<DeformPreset>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sets: Option<Vec<DeformSet>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub class_sets: Option<Vec<usize>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecisionSection {
    pub rule: Rule,
    #[serde(default = "one")]
    pub m: usize,
    /// Defaults to the experiment seed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

fn one() -> usize {
    1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    #[serde(default = "default_m_list")]
    pub m_list: Vec<usize>,
    #[serde(default = "default_sweep_rules")]
    pub rules: Vec<Rule>,
}

impl Default for SweepSection {
    fn default() -> Self {
        Self {
            m_list: default_m_list(),
            rules: default_sweep_rules(),
        }
    }
}

fn default_m_list() -> Vec<usize> {
    DEFAULT_M_LIST.to_vec()
}

fn default_sweep_rules() -> Vec<Rule> {
    vec![Rule::ApacLogMean]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    #[serde(default = "default_out")]
    pub dir: PathBuf,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self { dir: default_out() }
    }
}

fn default_out() -> PathBuf {
    PathBuf::from("runs")
}

/// A parsed config plus the directory its relative paths resolve against.
#[derive(Clone, Debug)]
pub struct LoadedConfig {
    pub config: ExperimentConfig,
    pub base_dir: PathBuf,
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let cfg: Self = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let d = &self.dataset;
        let need = |v: &Option<PathBuf>, key: &str| match v {
            Some(_) => Ok(()),
            None => Err(CliError::Config(format!("missing key `dataset.{key}` (required for {})", d.kind))),
        };
        match d.kind {
            DatasetKind::Mnist => {
                need(&d.train_images, "train_images")?;
                need(&d.train_labels, "train_labels")?;
                need(&d.test_images, "test_images")?;
                need(&d.test_labels, "test_labels")?;
            }
            DatasetKind::Cifar10 => {
                if d.train_batches.is_empty() {
                    return Err(CliError::Config("missing key `dataset.train_batches` (required for cifar10)".into()));
                }
                if d.test_batches.is_empty() {
                    return Err(CliError::Config("missing key `dataset.test_batches` (required for cifar10)".into()));
                }
            }
        }
        match (&self.architecture.preset, &self.architecture.layers) {
            (Some(_), None) | (None, Some(_)) => {}
            _ => {
                return Err(CliError::Config(
                    "`architecture` needs exactly one of `preset` or `layers`".into(),
                ))
            }
        }
        if let Some(p) = self.architecture.preset {
            if p.input_shape() != input_shape(d.kind) {
                return Err(CliError::Config(format!(
                    "architecture.preset `{p}` does not fit dataset kind `{}`",
                    d.kind
                )));
            }
        }
        self.train_config().validate().map_err(|e| CliError::Config(format!("[train]: {e}")))?;
        if let Some(spec) = self.deform_spec()? {
            if spec.kind() != d.kind {
                return Err(CliError::Config("[deform] sets are for a different dataset kind".into()));
            }
        }
        for (i, dc) in self.decision.iter().enumerate() {
            if dc.rule != Rule::NonApac && dc.m == 0 {
                return Err(CliError::Config(format!("decision[{i}].m must be at least 1")));
            }
        }
        if self.sweep.m_list.is_empty() {
            return Err(CliError::Config("sweep.m_list must not be empty".into()));
        }
        if self.sweep.m_list[0] == 0 || self.sweep.m_list.windows(2).any(|w| w[0] >= w[1]) {
            return Err(CliError::Config("sweep.m_list must be strictly ascending positive counts".into()));
        }
        Ok(())
    }

    /// Hex SHA-256 of the canonical TOML re-serialization.
    pub fn digest(&self) -> String {
        let canonical = toml::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(canonical.as_bytes()))
    }

    pub fn input_shape(&self) -> [usize; 3] {
        input_shape(self.dataset.kind)
    }

    pub fn layers(&self) -> Vec<LayerSpec> {
        match (&self.architecture.preset, &self.architecture.layers) {
            (Some(p), _) => p.layers(),
            (None, Some(l)) => l.clone(),
            (None, None) => Vec::new(),
        }
    }

    pub fn zca(&self) -> bool {
        self.dataset.zca.unwrap_or(self.dataset.kind == DatasetKind::Cifar10)
    }

    /// The deformation spec shared by training and the sampling decision
    /// rules; the dataset's experiment PDFs when `[deform]` is absent.
    pub fn deform_spec(&self) -> Result<Option<DeformSpec>, CliError> {
        let kind = self.dataset.kind;
        let Some(sec) = &self.deform else {
            return Ok(Some(default_spec(kind)));
        };
        let spec = match (&sec.preset, &sec.sets) {
            (Some(DeformPreset::Standard), None) => default_spec(kind),
            (Some(DeformPreset::Identity), None) => identity_spec(kind),
            (None, Some(sets)) => DeformSpec {
                sets: sets.clone(),
                class_sets: None,
            },
            _ => return Err(CliError::Config("[deform] needs exactly one of `preset` or `sets`".into())),
        };
        let spec = match &sec.class_sets {
            None => spec,
            Some(cs) => DeformSpec::class_distinctive(spec.sets, cs.clone())
                .map_err(|e| CliError::Config(format!("[deform]: {e}")))?,
        };
        spec.validate().map_err(|e| CliError::Config(format!("[deform]: {e}")))?;
        Ok(Some(spec))
    }

    pub fn train_config(&self) -> TrainConfig {
        let t = &self.train;
        TrainConfig {
            optim: OptimConfig {
                initial_lr: t.initial_lr,
                decay_per_epoch: t.lr_decay,
                momentum: t.momentum,
                l2_factor: t.l2,
                batch_size: t.batch_size,
            },
            epochs: t.epochs,
            deform: if t.augment { self.deform_spec().ok().flatten() } else { None },
            seed: self.seed,
            class_distinctive: t.class_distinctive,
            validation_fraction: t.validation_fraction,
        }
    }

    pub fn decision_configs(&self) -> Result<Vec<DecisionConfig>, CliError> {
        let spec = self.deform_spec()?;
        Ok(self
            .decision
            .iter()
            .map(|d| DecisionConfig {
                rule: d.rule,
                m: if d.rule == Rule::NonApac { 1 } else { d.m },
                deform: spec.clone(),
                seed: d.seed.unwrap_or(self.seed),
            })
            .collect())
    }
}

pub fn input_shape(kind: DatasetKind) -> [usize; 3] {
    match kind {
        DatasetKind::Mnist => [1, 28, 28],
        DatasetKind::Cifar10 => [3, 32, 32],
    }
}

impl LoadedConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let config =
            ExperimentConfig::parse(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        Ok(Self {
            config,
            base_dir: path.parent().map(Path::to_path_buf).unwrap_or_default(),
        })
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn output_dir(&self) -> PathBuf {
        self.resolve(&self.config.output.dir)
    }
}
