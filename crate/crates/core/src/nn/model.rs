use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Activation, BnSoftmaxHead, DenseUnitLayer, Head, HeadKind, LayerOptions, Mode, NnError, Result};
use crate::params::ParamStore;
use crate::tensor::{Tape, Tensor, Var};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub num_classes: usize,
    pub activation: Activation,
    pub use_batch_norm: bool,
    pub use_gamma: bool,
    pub head: HeadKind,
    pub gamma_c: f64,
    pub bn_epsilon: f64,
    pub bn_momentum: f64,
}

/// Hidden unit layers followed by a linear output layer and a head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Model {
    pub params: ParamStore,
    pub layers: Vec<DenseUnitLayer>,
    pub head: Head,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation {
    pub loss: f64,
    pub accuracy: f64,
}

impl Model {
    pub fn new<R: Rng + ?Sized>(spec: &ModelSpec, rng: &mut R) -> Result<Self> {
        if spec.input_dim == 0 || spec.num_classes < 2 {
            return Err(NnError::Config(format!(
                "need a positive input width and at least 2 classes, got {} and {}",
                spec.input_dim, spec.num_classes
            )));
        }
        let mut params = ParamStore::new();
        let mut layers = Vec::with_capacity(spec.hidden.len() + 1);
        let mut fan_in = spec.input_dim;
        for (i, &width) in spec.hidden.iter().enumerate() {
            let opts = LayerOptions {
                activation: spec.activation,
                use_batch_norm: spec.use_batch_norm,
                use_gamma: spec.use_gamma,
                use_bias: true,
                bn_momentum: spec.bn_momentum,
                bn_epsilon: spec.bn_epsilon,
            };
            layers.push(DenseUnitLayer::new(&mut params, &format!("layer{i}"), fan_in, width, opts, rng)?);
            fan_in = width;
        }
        // BN on the logits cancels any per-class scale and shift, so
        // BN-softmax drops both.
        let plain_head = spec.head == HeadKind::Softmax;
        let out_opts = LayerOptions {
            activation: Activation::Identity,
            use_batch_norm: false,
            use_gamma: spec.use_gamma && plain_head,
            use_bias: plain_head,
            bn_momentum: spec.bn_momentum,
            bn_epsilon: spec.bn_epsilon,
        };
        let name = format!("layer{}", spec.hidden.len());
        layers.push(DenseUnitLayer::new(&mut params, &name, fan_in, spec.num_classes, out_opts, rng)?);
        let head = match spec.head {
            HeadKind::Softmax => Head::Softmax,
            HeadKind::BnSoftmax => Head::BnSoftmax(BnSoftmaxHead::new(
                spec.num_classes,
                spec.gamma_c,
                spec.bn_momentum,
                spec.bn_epsilon,
            )?),
        };
        Ok(Self { params, layers, head })
    }

    pub fn set_mode(&mut self, mode: Mode) {
        for layer in &mut self.layers {
            if let Some(bn) = &mut layer.batch_norm {
                bn.mode = mode;
            }
        }
        if let Head::BnSoftmax(h) = &mut self.head {
            h.bn.mode = mode;
        }
    }

    /// Logits with parameters taken from `vars` (indexed by `ParamId`).
    pub fn forward_with<'t>(&mut self, tape: &'t Tape, vars: &[Var<'t>], x: Var<'t>) -> Result<Var<'t>> {
        let mut h = x;
        for layer in &mut self.layers {
            h = layer.forward(tape, vars, h)?;
        }
        self.head.forward(tape, h)
    }

    pub fn logits<'t>(&mut self, tape: &'t Tape, x: &Tensor) -> Result<Var<'t>> {
        let vars = self.params.register(tape);
        let xv = tape.constant(x.clone());
        self.forward_with(tape, &vars, xv)
    }

    pub fn loss<'t>(&mut self, tape: &'t Tape, x: &Tensor, targets: &[usize]) -> Result<Var<'t>> {
        Ok(self.logits(tape, x)?.softmax_cross_entropy(targets)?)
    }

    /// Eval-mode loss and accuracy over a whole set. Restores train mode.
    pub fn evaluate(&mut self, x: &Tensor, targets: &[usize]) -> Result<Evaluation> {
        self.set_mode(Mode::Eval);
        let tape = Tape::new();
        let out = self.logits(&tape, x).and_then(|z| {
            let loss = z.softmax_cross_entropy(targets)?.item().unwrap_or(f64::NAN);
            let logits = z.value();
            let correct = targets
                .iter()
                .enumerate()
                .filter(|&(r, &t)| argmax(logits.row(r)) == t)
                .count();
            Ok(Evaluation {
                loss,
                accuracy: correct as f64 / targets.len().max(1) as f64,
            })
        });
        self.set_mode(Mode::Train);
        out
    }

    /// Indices of hidden layers (every layer but the output one).
    pub fn hidden_layers(&self) -> std::ops::Range<usize> {
        0..self.layers.len() - 1
    }
}

fn argmax(row: &[f64]) -> usize {
    row.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) })
        .0
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::ParamRole;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn spec(head: HeadKind) -> ModelSpec {
        ModelSpec {
            input_dim: 4,
            hidden: vec![6, 5],
            num_classes: 3,
            activation: Activation::Relu,
            use_batch_norm: true,
            use_gamma: true,
            head,
            gamma_c: 2.5,
            bn_epsilon: 1e-5,
            bn_momentum: 0.9,
        }
    }

    #[test]
    fn builds_layers_and_partition() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let m = Model::new(&spec(HeadKind::Softmax), &mut rng).unwrap();
        assert_eq!(m.layers.len(), 3);
        assert_eq!(m.params.ids_with_role(ParamRole::UnitVectors).len(), 3);
        // two gammas + output gamma + three biases
        assert_eq!(m.params.ids_with_role(ParamRole::Scalars).len(), 6);
        let bn = Model::new(&spec(HeadKind::BnSoftmax), &mut rng).unwrap();
        assert!(bn.layers[2].gamma.is_none() && bn.layers[2].bias.is_none());
        assert_eq!(bn.params.ids_with_role(ParamRole::Scalars).len(), 4);
    }

    #[test]
    fn logit_shift_does_not_reach_bn_softmax() {
        // A per-class offset on the raw logits leaves BN-softmax logits
        // unchanged, which is why the output layer carries no bias there.
        let mut head = BnSoftmaxHead::new(3, 2.5, 0.9, 0.0).unwrap();
        let raw = Tensor::matrix(4, 3, (0..12).map(|i| (i as f64 * 0.7).cos()).collect()).unwrap();
        let shifted = raw.add(&Tensor::matrix(4, 3, [0.3, -1.0, 2.0].repeat(4)).unwrap()).unwrap();
        let a = crate::nn::bn_softmax_forward(&mut head, &raw).unwrap();
        let b = crate::nn::bn_softmax_forward(&mut head, &shifted).unwrap();
        for (x, y) in a.data().iter().zip(b.data()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn evaluate_restores_train_mode() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut m = Model::new(&spec(HeadKind::BnSoftmax), &mut rng).unwrap();
        let x = Tensor::matrix(4, 4, (0..16).map(|i| (i as f64).sin()).collect()).unwrap();
        let e = m.evaluate(&x, &[0, 1, 2, 0]).unwrap();
        assert!(e.loss.is_finite());
        assert!((0.0..=1.0).contains(&e.accuracy));
        assert_eq!(m.layers[0].batch_norm.as_ref().unwrap().mode, Mode::Train);
    }

    #[test]
    fn argmax_picks_first_max() {
        assert_eq!(argmax(&[0.0, 2.0, 2.0, -1.0]), 1);
    }
}
