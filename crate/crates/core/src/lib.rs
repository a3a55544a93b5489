//! Normalized direction-preserving Adam and the machinery around it.
//!
//! * [`tensor`]: dense tensors and a reverse-mode tape.
//! * [`nn`]: scaled dense units, batch norm, softmax and BN-softmax heads.
//! * [`optim`]: SGD with momentum and L2 decay, Adam, and ND-Adam.
//! * [`diagnostics`]: update-magnitude and softmax-gradient measurements.
//! * [`data`]: synthetic blobs, IDX and CSV loaders, splits and batching.
//! * [`harness`]: config-driven runs, comparisons and probes.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod data;
pub mod diagnostics;
pub mod harness;
pub mod nn;
pub mod optim;
pub mod parallel;
pub mod params;
pub mod tensor;

pub use params::{Param, ParamId, ParamRole, ParamStore};
pub use tensor::{Tensor, TensorError};
