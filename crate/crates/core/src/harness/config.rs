use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{HarnessError, Result};
use crate::data::{self, Dataset, Standardizer};
use crate::diagnostics::DiagnosticsConfig;
use crate::nn::{Activation, HeadKind, ModelSpec};
use crate::optim::{AdamHyper, ScheduleKind};

/// Environment variable that overrides `output_dir` for every run.
pub const OUTPUT_DIR_ENV: &str = "NDADAM_OUTPUT_DIR";

/// One training run, fully determined by this record and the dataset bytes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Row label in comparison tables; derived from the optimizer and head
    /// when empty.
    #[serde(default)]
    pub name: String,
    pub dataset: DatasetSpec,
    #[serde(default)]
    pub model: ModelConfig,
    pub optimizer: OptimizerSpec,
    pub schedule: ScheduleSpec,
    pub seed: u64,
    #[serde(default)]
    pub diagnostics: DiagnosticsConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSpec {
    Synthetic {
        num_classes: usize,
        samples_per_class: usize,
        feature_dim: usize,
        spread: f64,
        /// Seed of the generator and the split, independent of the run seed.
        #[serde(default)]
        data_seed: u64,
        #[serde(default = "default_test_fraction")]
        test_fraction: f64,
        #[serde(default)]
        standardize: bool,
    },
    Idx {
        images: PathBuf,
        labels: PathBuf,
        /// Separate test files; without them the training files are split.
        #[serde(default)]
        test_images: Option<PathBuf>,
        #[serde(default)]
        test_labels: Option<PathBuf>,
        #[serde(default = "default_test_fraction")]
        test_fraction: f64,
        #[serde(default)]
        data_seed: u64,
        #[serde(default)]
        standardize: bool,
    },
    Csv {
        path: PathBuf,
        #[serde(default = "default_test_fraction")]
        test_fraction: f64,
        #[serde(default)]
        data_seed: u64,
        #[serde(default)]
        standardize: bool,
    },
}

fn default_test_fraction() -> f64 {
    0.2
}

impl DatasetSpec {
    /// Train and test sets, standardized with train statistics if requested.
    /// Relative paths resolve against `base`.
    pub fn load(&self, base: &Path) -> Result<(Dataset, Dataset)> {
        let at = |p: &Path| if p.is_absolute() { p.to_path_buf() } else { base.join(p) };
        let (mut train, mut test, standardize) = match self {
            DatasetSpec::Synthetic {
                num_classes,
                samples_per_class,
                feature_dim,
                spread,
                data_seed,
                test_fraction,
                standardize,
            } => {
                let d = data::make_synthetic_blobs(*num_classes, *samples_per_class, *feature_dim, *spread, *data_seed)?;
                let (a, b) = data::split(&d, *test_fraction, *data_seed)?;
                (a, b, *standardize)
            }
            DatasetSpec::Idx {
                images,
                labels,
                test_images,
                test_labels,
                test_fraction,
                data_seed,
                standardize,
            } => {
                let d = data::load_idx(&at(images), &at(labels))?;
                let (a, b) = match (test_images, test_labels) {
                    (Some(ti), Some(tl)) => (d, data::load_idx(&at(ti), &at(tl))?),
                    (None, None) => data::split(&d, *test_fraction, *data_seed)?,
                    _ => {
                        return Err(HarnessError::Config(
                            "test_images and test_labels must be given together".into(),
                        ))
                    }
                };
                (a, b, *standardize)
            }
            DatasetSpec::Csv {
                path,
                test_fraction,
                data_seed,
                standardize,
            } => {
                let d = data::load_csv(&at(path))?;
                let (a, b) = data::split(&d, *test_fraction, *data_seed)?;
                (a, b, *standardize)
            }
        };
        if train.feature_dim() != test.feature_dim() {
            return Err(HarnessError::Config(format!(
                "train features have dimension {}, test features {}",
                train.feature_dim(),
                test.feature_dim()
            )));
        }
        let classes = train.num_classes.max(test.num_classes);
        train.num_classes = classes;
        test.num_classes = classes;
        if standardize {
            let s = Standardizer::fit(&train);
            s.apply(&mut train);
            s.apply(&mut test);
        }
        Ok((train, test))
    }
}

/// Model shape; input width and class count come from the data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub use_batch_norm: bool,
    pub use_gamma: bool,
    pub head: HeadKind,
    pub gamma_c: f64,
    pub bn_epsilon: f64,
    pub bn_momentum: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            hidden: vec![128, 128, 128],
            activation: Activation::Relu,
            use_batch_norm: true,
            use_gamma: true,
            head: HeadKind::Softmax,
            gamma_c: 2.5,
            bn_epsilon: 1e-5,
            bn_momentum: 0.9,
        }
    }
}

impl ModelConfig {
    pub fn spec(&self, input_dim: usize, num_classes: usize) -> ModelSpec {
        ModelSpec {
            input_dim,
            hidden: self.hidden.clone(),
            num_classes,
            activation: self.activation,
            use_batch_norm: self.use_batch_norm,
            use_gamma: self.use_gamma,
            head: self.head,
            gamma_c: self.gamma_c,
            bn_epsilon: self.bn_epsilon,
            bn_momentum: self.bn_momentum,
        }
    }

    /// Everything except the head choice.
    pub fn same_body(&self, other: &Self) -> bool {
        self.hidden == other.hidden
            && self.activation == other.activation
            && self.use_batch_norm == other.use_batch_norm
            && self.use_gamma == other.use_gamma
            && self.bn_epsilon == other.bn_epsilon
            && self.bn_momentum == other.bn_momentum
    }
}

fn default_momentum() -> f64 {
    0.9
}
fn default_sgd_decay() -> f64 {
    0.001
}
fn default_sgd_lr() -> f64 {
    0.1
}
fn default_adam_lr() -> f64 {
    0.001
}
fn default_lr_vector() -> f64 {
    0.05
}
fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_epsilon() -> f64 {
    1e-8
}

/// Optimizer and its hyperparameters; every rate is an initial value that
/// the schedule anneals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum OptimizerSpec {
    Sgd {
        #[serde(default = "default_sgd_lr")]
        lr: f64,
        #[serde(default = "default_momentum")]
        momentum: f64,
        #[serde(default = "default_sgd_decay")]
        weight_decay: f64,
    },
    Adam {
        #[serde(default = "default_adam_lr")]
        lr: f64,
        #[serde(default = "default_beta1")]
        beta1: f64,
        #[serde(default = "default_beta2")]
        beta2: f64,
        #[serde(default = "default_epsilon")]
        epsilon: f64,
        #[serde(default)]
        weight_decay: f64,
    },
    NdAdam {
        #[serde(default = "default_lr_vector")]
        lr_vector: f64,
        #[serde(default = "default_adam_lr")]
        lr_scalar: f64,
        #[serde(default = "default_beta1")]
        beta1: f64,
        #[serde(default = "default_beta2")]
        beta2: f64,
        #[serde(default = "default_epsilon")]
        epsilon: f64,
    },
}

impl OptimizerSpec {
    pub fn kind_name(&self) -> &'static str {
        match self {
            OptimizerSpec::Sgd { .. } => "sgd",
            OptimizerSpec::Adam { .. } => "adam",
            OptimizerSpec::NdAdam { .. } => "nd_adam",
        }
    }

    pub(crate) fn hyper(&self) -> Option<AdamHyper> {
        match *self {
            OptimizerSpec::Sgd { .. } => None,
            OptimizerSpec::Adam {
                beta1, beta2, epsilon, ..
            }
            | OptimizerSpec::NdAdam {
                beta1, beta2, epsilon, ..
            } => Some(AdamHyper { beta1, beta2, epsilon }),
        }
    }

    fn rates(&self) -> Vec<(&'static str, f64)> {
        match *self {
            OptimizerSpec::Sgd { lr, .. } | OptimizerSpec::Adam { lr, .. } => vec![("lr", lr)],
            OptimizerSpec::NdAdam {
                lr_vector, lr_scalar, ..
            } => vec![("lr_vector", lr_vector), ("lr_scalar", lr_scalar)],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleSpec {
    #[serde(default = "default_schedule_kind")]
    pub kind: ScheduleKind,
    pub epochs: usize,
    pub batch_size: usize,
}

fn default_schedule_kind() -> ScheduleKind {
    ScheduleKind::Cosine
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let c: Self = serde_json::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| HarnessError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text)
    }

    pub fn label(&self) -> String {
        if !self.name.is_empty() {
            return self.name.clone();
        }
        let head = match self.model.head {
            HeadKind::Softmax => "softmax",
            HeadKind::BnSoftmax => "bn_softmax",
        };
        format!("{}+{head}", self.optimizer.kind_name())
    }

    /// Checks that need no data.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(HarnessError::Config(m));
        for (name, r) in self.optimizer.rates() {
            if !(r > 0.0 && r.is_finite()) {
                return bad(format!("optimizer {name} must be positive, got {r}"));
            }
        }
        match self.optimizer {
            OptimizerSpec::Sgd {
                momentum, weight_decay, ..
            } => {
                if !(0.0..1.0).contains(&momentum) {
                    return bad(format!("momentum must lie in [0, 1), got {momentum}"));
                }
                if !(weight_decay >= 0.0) {
                    return bad(format!("weight_decay must be non-negative, got {weight_decay}"));
                }
            }
            OptimizerSpec::Adam { weight_decay, .. } if !(weight_decay >= 0.0) => {
                return bad(format!("weight_decay must be non-negative, got {weight_decay}"));
            }
            _ => {}
        }
        if let Some(h) = self.optimizer.hyper() {
            h.validate().map_err(|e| HarnessError::Config(e.to_string()))?;
        }
        if self.schedule.epochs == 0 {
            return bad("epochs must be at least 1".into());
        }
        if self.schedule.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        let m = &self.model;
        if m.hidden.contains(&0) {
            return bad("hidden widths must be positive".into());
        }
        if m.head == HeadKind::BnSoftmax && !(m.gamma_c > 0.0 && m.gamma_c.is_finite()) {
            return bad(format!("gamma_c must be positive, got {}", m.gamma_c));
        }
        if (m.use_batch_norm || m.head == HeadKind::BnSoftmax) && self.schedule.batch_size < 2 {
            return bad("batch normalization needs batch_size >= 2".into());
        }
        if !(m.bn_momentum > 0.0 && m.bn_momentum < 1.0) || !(m.bn_epsilon >= 0.0) {
            return bad("bn_momentum must lie in (0, 1) and bn_epsilon be non-negative".into());
        }
        if self.diagnostics.stride == 0 {
            return bad("diagnostics stride must be positive".into());
        }
        if let Some(&l) = self.diagnostics.layers.iter().find(|&&l| l >= m.hidden.len()) {
            return bad(format!("diagnostics layer {l} does not exist ({} hidden layers)", m.hidden.len()));
        }
        let frac = match &self.dataset {
            DatasetSpec::Synthetic { test_fraction, spread, .. } => {
                if !(*spread > 0.0) {
                    return bad(format!("spread must be positive, got {spread}"));
                }
                *test_fraction
            }
            DatasetSpec::Idx { test_fraction, .. } | DatasetSpec::Csv { test_fraction, .. } => *test_fraction,
        };
        if !(frac > 0.0 && frac < 1.0) {
            return bad(format!("test_fraction must lie in (0, 1), got {frac}"));
        }
        Ok(())
    }

    /// Checks against the loaded training set.
    pub(crate) fn validate_with_data(&self, train: &Dataset) -> Result<()> {
        let uses_bn = self.model.use_batch_norm || self.model.head == HeadKind::BnSoftmax;
        if uses_bn && train.len() % self.schedule.batch_size == 1 {
            return Err(HarnessError::Config(format!(
                "{} training samples in batches of {} leave a final batch of one, which batch \
                 normalization cannot use; pick another batch size",
                train.len(),
                self.schedule.batch_size
            )));
        }
        if train.num_classes < 2 {
            return Err(HarnessError::Config("the training set needs at least 2 classes".into()));
        }
        Ok(())
    }

    /// `output_dir` unless the override variable is set.
    pub fn resolved_output_dir(&self) -> Option<PathBuf> {
        match std::env::var_os(OUTPUT_DIR_ENV) {
            Some(v) if !v.is_empty() => Some(PathBuf::from(v)),
            _ => self.output_dir.clone(),
        }
    }
}
