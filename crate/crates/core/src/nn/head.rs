use serde::{Deserialize, Serialize};

use super::{BatchNormState, NnError, Result};
use crate::tensor::{Tape, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadKind {
    Softmax,
    BnSoftmax,
}

/// Batch-normalized logits scaled by one shared factor `gamma_c`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BnSoftmaxHead {
    pub bn: BatchNormState,
    pub gamma_c: f64,
}

impl BnSoftmaxHead {
    pub fn new(classes: usize, gamma_c: f64, momentum: f64, epsilon: f64) -> Result<Self> {
        if !(gamma_c > 0.0 && gamma_c.is_finite()) {
            return Err(NnError::Config(format!(
                "gamma_c must be positive, got {gamma_c}"
            )));
        }
        Ok(Self {
            bn: BatchNormState::new(classes, momentum, epsilon)?,
            gamma_c,
        })
    }

    pub fn forward<'t>(&mut self, tape: &'t Tape, raw_logits: Var<'t>) -> Result<Var<'t>> {
        Ok(self.bn.forward(tape, raw_logits)?.scale(self.gamma_c))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Head {
    Softmax,
    BnSoftmax(BnSoftmaxHead),
}

impl Head {
    pub fn kind(&self) -> HeadKind {
        match self {
            Head::Softmax => HeadKind::Softmax,
            Head::BnSoftmax(_) => HeadKind::BnSoftmax,
        }
    }

    pub fn forward<'t>(&mut self, tape: &'t Tape, raw_logits: Var<'t>) -> Result<Var<'t>> {
        match self {
            Head::Softmax => Ok(raw_logits),
            Head::BnSoftmax(h) => h.forward(tape, raw_logits),
        }
    }
}

/// Tensor-in, tensor-out BN-softmax logits.
pub fn bn_softmax_forward(head: &mut BnSoftmaxHead, raw_logits: &Tensor) -> Result<Tensor> {
    let tape = Tape::new();
    let z = tape.constant(raw_logits.clone());
    Ok(head.forward(&tape, z)?.value())
}

/// Mean cross-entropy of `logits` against class indices, and its gradient
/// with respect to the logits.
pub fn softmax_cross_entropy(logits: &Tensor, targets: &[usize]) -> Result<(f64, Tensor)> {
    let tape = Tape::new();
    let z = tape.leaf(logits.clone());
    let loss = z.softmax_cross_entropy(targets)?;
    let grads = tape.backward(loss)?;
    let g = grads.wrt(&z).cloned().expect("logit gradient");
    Ok((loss.item().expect("scalar"), g))
}
