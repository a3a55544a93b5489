//! SGD with momentum and L2 decay, Adam, and ND-Adam.
//!
//! ND-Adam splits the parameters into unit-norm input weight vectors, which
//! take sphere-projected steps with one second-moment scalar per vector, and
//! everything else, which takes plain Adam steps. Both paths share one step
//! counter.

mod adam;
mod checkpoint;
mod group;
mod nd_adam;
mod schedule;
mod sgd;
mod sphere;

pub use adam::{adam_scalar_step, Adam, AdamSlots};
pub use checkpoint::{OptimizerCheckpoint, CHECKPOINT_VERSION};
pub use group::ParamGroup;
pub use nd_adam::{NdAdam, VectorParamState};
pub use schedule::{lr_at, LrSchedule, ScheduleKind};
pub use sgd::Sgd;
pub use sphere::{nd_adam_vector_step, project_to_sphere, relative_update_magnitude, VectorMoments, VectorStep};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::params::{ParamId, ParamStore};
use crate::tensor::{Gradients, Tensor};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OptimError {
    #[error("no gradient supplied for parameter {name} ({id})")]
    MissingGradient { id: ParamId, name: String },
    #[error("gradient for {name} has shape {grad:?}, parameter has {param:?}")]
    GradientShape {
        name: String,
        grad: Vec<usize>,
        param: Vec<usize>,
    },
    #[error("weight vector must have unit norm, got {norm}")]
    NotUnitNorm { norm: f64 },
    #[error("vector length mismatch: {0} vs {1}")]
    Length(usize, usize),
    #[error(
        "step {step}: update of {name} column {vector} collapsed to zero norm \
         (|m_hat| = {m_hat_norm}, sqrt(v_hat) = {v_hat_sqrt}, lr = {lr})"
    )]
    DegenerateUpdate {
        step: u64,
        name: String,
        vector: usize,
        m_hat_norm: f64,
        v_hat_sqrt: f64,
        lr: f64,
    },
    #[error("invalid parameter partition: {0}")]
    Partition(String),
    #[error("invalid optimizer setting: {0}")]
    Config(String),
    #[error("zero-norm weight vector")]
    ZeroVector,
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

pub type Result<T> = std::result::Result<T, OptimError>;

/// Adam decay factors and the denominator offset.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamHyper {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl AdamHyper {
    pub fn validate(&self) -> Result<()> {
        let in_unit = |b: f64| (0.0..1.0).contains(&b);
        if !in_unit(self.beta1) || !in_unit(self.beta2) {
            return Err(OptimError::Config(format!(
                "betas must lie in [0, 1), got {} and {}",
                self.beta1, self.beta2
            )));
        }
        if !(self.epsilon >= 0.0) {
            return Err(OptimError::Config(format!(
                "epsilon must be non-negative, got {}",
                self.epsilon
            )));
        }
        Ok(())
    }
}

/// Loss and decay parts of one SGD displacement, `delta = loss + decay`.
#[derive(Debug, Clone, PartialEq)]
pub struct UpdateParts {
    pub loss: Tensor,
    pub decay: Tensor,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct StepReport {
    pub step: u64,
    /// Only SGD fills this, for parameters under L2 decay.
    pub decomposition: Vec<(ParamId, UpdateParts)>,
}

impl StepReport {
    pub fn parts(&self, id: ParamId) -> Option<&UpdateParts> {
        self.decomposition.iter().find(|(p, _)| *p == id).map(|(_, u)| u)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Optimizer {
    Sgd(Sgd),
    Adam(Adam),
    NdAdam(NdAdam),
}

impl Optimizer {
    pub fn step(&mut self, store: &mut ParamStore, grads: &Gradients) -> Result<StepReport> {
        match self {
            Optimizer::Sgd(o) => o.step(store, grads),
            Optimizer::Adam(o) => o.step(store, grads),
            Optimizer::NdAdam(o) => o.step(store, grads),
        }
    }

    /// Number of completed steps.
    pub fn steps(&self) -> u64 {
        match self {
            Optimizer::Sgd(o) => o.t,
            Optimizer::Adam(o) => o.t,
            Optimizer::NdAdam(o) => o.t,
        }
    }
}

pub(crate) fn gradient<'g>(store: &ParamStore, grads: &'g Gradients, id: ParamId) -> Result<&'g Tensor> {
    let p = store.get(id);
    let g = grads.get(id).ok_or_else(|| OptimError::MissingGradient {
        id,
        name: p.name.clone(),
    })?;
    if g.shape() != p.value.shape() {
        return Err(OptimError::GradientShape {
            name: p.name.clone(),
            grad: g.shape().to_vec(),
            param: p.value.shape().to_vec(),
        });
    }
    Ok(g)
}
