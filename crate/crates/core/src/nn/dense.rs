use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{BatchNormState, NnError, Result};
use crate::params::{ParamId, ParamRole, ParamStore};
use crate::tensor::{Tape, Tensor, TensorError, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Tanh,
    Sigmoid,
    Identity,
}

impl Activation {
    pub fn apply<'t>(self, x: Var<'t>) -> Var<'t> {
        match self {
            Activation::Relu => x.relu(),
            Activation::Tanh => x.tanh(),
            Activation::Sigmoid => x.sigmoid(),
            Activation::Identity => x,
        }
    }

    pub fn eval(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
            Activation::Sigmoid => crate::tensor::sigmoid(x),
            Activation::Identity => x,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LayerOptions {
    pub activation: Activation,
    pub use_batch_norm: bool,
    pub use_gamma: bool,
    pub use_bias: bool,
    pub bn_momentum: f64,
    pub bn_epsilon: f64,
}

/// Layer of units `y_i = act(gamma_i * pre_i + b_i)` where `pre_i` is
/// `w_i . x`, or its batch-normalized form when batch norm is on. The unit
/// weight vectors `w_i` are the columns of the `[fan_in, fan_out]` weight;
/// `gamma` and `b` are optional.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseUnitLayer {
    pub fan_in: usize,
    pub fan_out: usize,
    pub weight: ParamId,
    pub gamma: Option<ParamId>,
    pub bias: Option<ParamId>,
    pub activation: Activation,
    pub batch_norm: Option<BatchNormState>,
}

impl DenseUnitLayer {
    /// Registers the layer's parameters in `store`. Weights are Gaussian with
    /// variance `2 / fan_in`, gammas one, biases zero.
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        fan_in: usize,
        fan_out: usize,
        opts: LayerOptions,
        rng: &mut R,
    ) -> Result<Self> {
        if fan_in == 0 || fan_out == 0 {
            return Err(NnError::Config(format!(
                "{name}: extents must be positive, got {fan_in}x{fan_out}"
            )));
        }
        let scale = (2.0 / fan_in as f64).sqrt();
        let w: Vec<f64> = (0..fan_in * fan_out)
            .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let weight = store.add(
            format!("{name}.weight"),
            ParamRole::UnitVectors,
            Tensor::matrix(fan_in, fan_out, w)?,
        );
        let gamma = opts.use_gamma.then(|| {
            store.add(
                format!("{name}.gamma"),
                ParamRole::Scalars,
                Tensor::full(vec![fan_out], 1.0),
            )
        });
        let bias = opts.use_bias.then(|| {
            store.add(
                format!("{name}.bias"),
                ParamRole::Scalars,
                Tensor::zeros(vec![fan_out]),
            )
        });
        let batch_norm = if opts.use_batch_norm {
            Some(BatchNormState::new(fan_out, opts.bn_momentum, opts.bn_epsilon)?)
        } else {
            None
        };
        Ok(Self {
            fan_in,
            fan_out,
            weight,
            gamma,
            bias,
            activation: opts.activation,
            batch_norm,
        })
    }

    /// `vars` are the store's leaves, indexed by `ParamId`.
    pub fn forward<'t>(&mut self, tape: &'t Tape, vars: &[Var<'t>], x: Var<'t>) -> Result<Var<'t>> {
        let shape = x.shape();
        if shape.len() != 2 || shape[1] != self.fan_in {
            return Err(TensorError::ShapeMismatch {
                op: "dense_forward",
                left: shape,
                right: vec![self.fan_in, self.fan_out],
            }
            .into());
        }
        let mut pre = x.matmul(&vars[self.weight.0])?;
        if let Some(bn) = &mut self.batch_norm {
            pre = bn.forward(tape, pre)?;
        }
        if let Some(gamma) = self.gamma {
            pre = pre.mul(&vars[gamma.0])?;
        }
        if let Some(bias) = self.bias {
            pre = pre.add(&vars[bias.0])?;
        }
        Ok(self.activation.apply(pre))
    }
}

/// Tensor-in, tensor-out forward pass of a single layer.
pub fn dense_forward(layer: &mut DenseUnitLayer, params: &ParamStore, x: &Tensor) -> Result<Tensor> {
    let tape = Tape::new();
    let vars: Vec<Var<'_>> = params
        .iter()
        .map(|(_, p)| tape.constant(p.value.clone()))
        .collect();
    let xv = tape.constant(x.clone());
    Ok(layer.forward(&tape, &vars, xv)?.value())
}

/// Whether the weight-normalized unit `act((gamma/|w|) w.x + b)` agrees with
/// the unit-vector form `act(gamma (w/|w|).x + b)` to within 1e-12.
pub fn weight_norm_equivalence_check(
    w: &Tensor,
    gamma: f64,
    x: &Tensor,
    b: f64,
    activation: Activation,
) -> Result<bool> {
    let n = w.norm();
    if n == 0.0 {
        return Err(NnError::ZeroWeight);
    }
    let wx = w.dot(x)?;
    let weight_normed = activation.eval(gamma / n * wx + b);
    let unit = w.map(|v| v / n);
    let unit_form = activation.eval(gamma * unit.dot(x)? + b);
    Ok((weight_normed - unit_form).abs() <= 1e-12)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::{prop_assert, prop_assume, proptest, ProptestConfig};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn opts(activation: Activation, use_batch_norm: bool, use_gamma: bool) -> LayerOptions {
        LayerOptions {
            activation,
            use_batch_norm,
            use_gamma,
            use_bias: true,
            bn_momentum: 0.9,
            bn_epsilon: 0.0,
        }
    }

    fn single_unit(w: [f64; 2], gamma: f64, b: f64, bn: bool) -> (DenseUnitLayer, ParamStore) {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let layer =
            DenseUnitLayer::new(&mut store, "l", 2, 1, opts(Activation::Identity, bn, true), &mut rng).unwrap();
        store.get_mut(layer.weight).value = Tensor::matrix(2, 1, w.to_vec()).unwrap();
        store.get_mut(layer.gamma.unwrap()).value = Tensor::vector(vec![gamma]);
        store.get_mut(layer.bias.unwrap()).value = Tensor::vector(vec![b]);
        (layer, store)
    }

    #[test]
    fn scaled_unit_arithmetic() {
        let (mut layer, store) = single_unit([0.6, 0.8], 2.0, 0.1, false);
        let x = Tensor::matrix(1, 2, vec![1.0, 1.0]).unwrap();
        let y = dense_forward(&mut layer, &store, &x).unwrap();
        assert!((y.data()[0] - 2.9).abs() < 1e-12);
    }

    #[test]
    fn unit_gamma_zero_bias_is_matmul() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut layer = DenseUnitLayer::new(&mut store, "l", 3, 4, opts(Activation::Identity, false, true), &mut rng)
            .unwrap();
        let x = Tensor::matrix(2, 3, vec![0.5, -1.0, 2.0, 1.5, 0.0, -0.3]).unwrap();
        let y = dense_forward(&mut layer, &store, &x).unwrap();
        let expected = x.matmul(&store.get(layer.weight).value).unwrap();
        assert_eq!(y, expected);
    }

    #[test]
    fn batch_norm_unit_standardizes_before_scale() {
        let (mut layer, store) = single_unit([1.0, 0.0], 1.0, 0.0, true);
        let x = Tensor::matrix(2, 2, vec![1.0, 9.0, 3.0, -4.0]).unwrap();
        let y = dense_forward(&mut layer, &store, &x).unwrap();
        assert_eq!(y.data(), &[-1.0, 1.0]);
    }

    #[test]
    fn input_width_checked() {
        let (mut layer, store) = single_unit([1.0, 0.0], 1.0, 0.0, false);
        let x = Tensor::matrix(1, 3, vec![1.0; 3]).unwrap();
        assert!(matches!(
            dense_forward(&mut layer, &store, &x),
            Err(NnError::Tensor(TensorError::ShapeMismatch { .. }))
        ));
    }

    #[test]
    fn rescaled_weight_column_is_invisible_under_batch_norm() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut layer =
            DenseUnitLayer::new(&mut store, "l", 5, 4, opts(Activation::Relu, true, true), &mut rng).unwrap();
        let x = Tensor::matrix(6, 5, (0..30).map(|_| rng.gen_range(-2.0..2.0)).collect()).unwrap();
        let before = dense_forward(&mut layer, &store, &x).unwrap();
        for c in [0.01, 3.0, 250.0] {
            let mut scaled = store.clone();
            let p = scaled.get_mut(layer.weight);
            let col: Vec<f64> = p.vector(2).iter().map(|v| v * c).collect();
            p.set_vector(2, &col);
            let after = dense_forward(&mut layer, &scaled, &x).unwrap();
            for (a, b) in before.data().iter().zip(after.data()) {
                assert!((a - b).abs() < 1e-9, "c={c}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn weight_norm_examples() {
        let w = Tensor::vector(vec![3.0, 4.0]);
        let x = Tensor::vector(vec![1.0, 0.0]);
        assert!(weight_norm_equivalence_check(&w, 1.0, &x, 0.0, Activation::Identity).unwrap());
        let unit = Tensor::vector(vec![0.6, 0.8]);
        assert!(weight_norm_equivalence_check(&unit, 1.3, &x, 0.2, Activation::Tanh).unwrap());
        assert_eq!(
            weight_norm_equivalence_check(&Tensor::zeros(vec![2]), 1.0, &x, 0.0, Activation::Relu),
            Err(NnError::ZeroWeight)
        );
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]
        #[test]
        fn weight_norm_forward_equivalence(
            w in proptest::collection::vec(-3.0f64..3.0, 4),
            x in proptest::collection::vec(-3.0f64..3.0, 4),
            gamma in 0.1f64..3.0,
            b in -1.0f64..1.0,
        ) {
            let w = Tensor::vector(w);
            prop_assume!(w.norm() > 1e-3);
            let x = Tensor::vector(x);
            for act in [Activation::Relu, Activation::Tanh, Activation::Sigmoid, Activation::Identity] {
                prop_assert!(weight_norm_equivalence_check(&w, gamma, &x, b, act).unwrap());
            }
        }
    }
}
