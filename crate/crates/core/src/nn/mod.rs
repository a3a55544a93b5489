//! Dense units with an explicit per-unit scale, batch normalization without
//! affine parameters, and softmax / BN-softmax classification heads.

mod batchnorm;
mod dense;
mod head;
mod model;

pub use batchnorm::{batchnorm, BatchNormState, Mode};
pub use dense::{dense_forward, weight_norm_equivalence_check, Activation, DenseUnitLayer, LayerOptions};
pub use head::{bn_softmax_forward, softmax_cross_entropy, BnSoftmaxHead, Head, HeadKind};
pub use model::{Evaluation, Model, ModelSpec};

use thiserror::Error;

use crate::tensor::TensorError;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NnError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("invalid layer configuration: {0}")]
    Config(String),
    #[error("weight vector has zero norm")]
    ZeroWeight,
}

pub type Result<T> = std::result::Result<T, NnError>;
