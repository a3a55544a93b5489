use std::cell::RefCell;
use std::collections::BTreeMap;

use super::{broadcast_binary, Result, Tensor, TensorError};
use crate::params::ParamId;

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Matmul(usize, usize),
    SumAxis(usize, usize),
    MeanAxis(usize, usize),
    SumAll(usize),
    Scale(usize, f64),
    Relu(usize),
    Tanh(usize),
    Sigmoid(usize),
    /// Cached value is the standardized output.
    BatchNorm { input: usize, inv_std: Vec<f64> },
    SoftmaxCrossEntropy {
        input: usize,
        targets: Vec<usize>,
        probs: Tensor,
        /// `1 - p[target]` per row, summed from the non-target probabilities.
        target_complement: Vec<f64>,
    },
}

#[derive(Debug)]
struct Node {
    op: Op,
    value: Tensor,
    requires_grad: bool,
    param: Option<ParamId>,
}

/// Append-only record of a forward pass. Rebuilt for every pass.
///
/// Nodes are pushed in evaluation order, so inputs always precede their
/// consumers and a single reverse sweep visits each node once.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Var").field("id", &self.id).finish()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, op: Op, value: Tensor, requires_grad: bool, param: Option<ParamId>) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            op,
            value,
            requires_grad,
            param,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    /// A differentiable leaf. Its gradient is available via [`Gradients::wrt`].
    pub fn leaf(&self, value: Tensor) -> Var<'_> {
        self.push(Op::Leaf, value, true, None)
    }

    /// A leaf bound to a model parameter.
    pub fn param(&self, id: ParamId, value: Tensor) -> Var<'_> {
        self.push(Op::Leaf, value, true, Some(id))
    }

    /// A leaf that never receives a gradient.
    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.push(Op::Leaf, value, false, None)
    }

    fn requires(&self, ids: &[usize]) -> bool {
        let nodes = self.nodes.borrow();
        ids.iter().any(|&i| nodes[i].requires_grad)
    }

    /// Reverse sweep from a scalar `loss`. Every leaf on the tape gets a
    /// gradient (zero when the loss does not depend on it).
    pub fn backward(&self, loss: Var<'_>) -> Result<Gradients> {
        let nodes = self.nodes.borrow();
        let loss_node = &nodes[loss.id];
        if !loss_node.value.is_scalar() {
            return Err(TensorError::NonScalarLoss(loss_node.value.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; loss.id + 1];
        grads[loss.id] = Some(Tensor::full(loss_node.value.shape().to_vec(), 1.0));

        for id in (0..=loss.id).rev() {
            let node = &nodes[id];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            if matches!(node.op, Op::Leaf) {
                grads[id] = Some(g);
                continue;
            }
            for (input, contribution) in backprop(&nodes, node, &g)? {
                if !nodes[input].requires_grad {
                    continue;
                }
                match &mut grads[input] {
                    Some(acc) => {
                        for (a, c) in acc.data_mut().iter_mut().zip(contribution.data()) {
                            *a += c;
                        }
                    }
                    slot @ None => *slot = Some(contribution),
                }
            }
        }

        let mut leaves = BTreeMap::new();
        let mut params = BTreeMap::new();
        for (id, node) in nodes.iter().enumerate() {
            if !(matches!(node.op, Op::Leaf) && node.requires_grad) {
                continue;
            }
            let g = grads
                .get_mut(id)
                .and_then(Option::take)
                .unwrap_or_else(|| Tensor::zeros_like(&node.value));
            match node.param {
                Some(pid) => {
                    params.insert(pid, g.clone());
                    leaves.insert(id, g);
                }
                None => {
                    leaves.insert(id, g);
                }
            }
        }
        Ok(Gradients { leaves, params })
    }
}

fn backprop(nodes: &[Node], node: &Node, g: &Tensor) -> Result<Vec<(usize, Tensor)>> {
    let val = |i: usize| &nodes[i].value;
    Ok(match &node.op {
        Op::Leaf => Vec::new(),
        Op::Add(a, b) => vec![
            (*a, g.sum_to_shape(val(*a).shape())),
            (*b, g.sum_to_shape(val(*b).shape())),
        ],
        Op::Sub(a, b) => vec![
            (*a, g.sum_to_shape(val(*a).shape())),
            (*b, g.sum_to_shape(val(*b).shape()).map(|v| -v)),
        ],
        Op::Mul(a, b) => vec![
            (*a, g.mul(val(*b))?.sum_to_shape(val(*a).shape())),
            (*b, g.mul(val(*a))?.sum_to_shape(val(*b).shape())),
        ],
        Op::Matmul(a, b) => vec![
            (*a, g.matmul(&val(*b).transpose()?)?),
            (*b, val(*a).transpose()?.matmul(g)?),
        ],
        Op::SumAxis(a, axis) => vec![(*a, expand_axis(g, val(*a).shape(), *axis, 1.0)?)],
        Op::MeanAxis(a, axis) => {
            let len = val(*a).shape()[*axis] as f64;
            vec![(*a, expand_axis(g, val(*a).shape(), *axis, 1.0 / len)?)]
        }
        Op::SumAll(a) => {
            let s = g.data()[0];
            vec![(*a, Tensor::full(val(*a).shape().to_vec(), s))]
        }
        Op::Scale(a, c) => vec![(*a, g.map(|v| v * c))],
        Op::Relu(a) => {
            let x = val(*a);
            vec![(*a, broadcast_binary(g, x, "relu", |gv, xv| if xv > 0.0 { gv } else { 0.0 })?)]
        }
        Op::Tanh(a) => {
            let y = &node.value;
            vec![(*a, broadcast_binary(g, y, "tanh", |gv, yv| gv * (1.0 - yv * yv))?)]
        }
        Op::Sigmoid(a) => {
            let y = &node.value;
            vec![(*a, broadcast_binary(g, y, "sigmoid", |gv, yv| gv * yv * (1.0 - yv))?)]
        }
        Op::BatchNorm { input, inv_std } => {
            let y = &node.value;
            let (rows, cols) = y.dims2("batch_norm")?;
            let n = rows as f64;
            let mut sum_g = vec![0.0; cols];
            let mut sum_gy = vec![0.0; cols];
            for r in 0..rows {
                for c in 0..cols {
                    let gv = g.data()[r * cols + c];
                    sum_g[c] += gv;
                    sum_gy[c] += gv * y.data()[r * cols + c];
                }
            }
            let mut dx = vec![0.0; rows * cols];
            for r in 0..rows {
                for c in 0..cols {
                    let k = r * cols + c;
                    dx[k] = inv_std[c] / n * (n * g.data()[k] - sum_g[c] - y.data()[k] * sum_gy[c]);
                }
            }
            vec![(*input, Tensor::matrix(rows, cols, dx)?)]
        }
        Op::SoftmaxCrossEntropy {
            input,
            targets,
            probs,
            target_complement,
        } => {
            let (rows, cols) = probs.dims2("softmax_cross_entropy")?;
            let scale = g.data()[0] / rows as f64;
            let mut dz = probs.data().to_vec();
            for (r, &t) in targets.iter().enumerate() {
                dz[r * cols + t] = -target_complement[r];
            }
            for v in &mut dz {
                *v *= scale;
            }
            vec![(*input, Tensor::matrix(rows, cols, dz)?)]
        }
    })
}

/// Broadcast a reduced gradient back over the removed `axis`.
fn expand_axis(g: &Tensor, full: &[usize], axis: usize, factor: f64) -> Result<Tensor> {
    let mut kept = full.to_vec();
    kept[axis] = 1;
    let g = Tensor::new(kept, g.data().to_vec())?;
    broadcast_binary(&Tensor::zeros(full.to_vec()), &g, "expand", |_, gv| gv * factor)
}

impl<'t> Var<'t> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn value(&self) -> Tensor {
        self.tape.nodes.borrow()[self.id].value.clone()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.nodes.borrow()[self.id].value.shape().to_vec()
    }

    /// Scalar value of a one-element node.
    pub fn item(&self) -> Option<f64> {
        self.tape.nodes.borrow()[self.id].value.item()
    }

    fn same_tape(&self, other: &Var<'t>) {
        assert!(
            std::ptr::eq(self.tape, other.tape),
            "vars recorded on different tapes"
        );
    }

    fn unary(&self, op: Op, value: Tensor) -> Var<'t> {
        let rg = self.tape.requires(&[self.id]);
        self.tape.push(op, value, rg, None)
    }

    fn binary(&self, other: &Var<'t>, op: Op, value: Tensor) -> Var<'t> {
        let rg = self.tape.requires(&[self.id, other.id]);
        self.tape.push(op, value, rg, None)
    }

    fn with_values<R>(&self, other: &Var<'t>, f: impl FnOnce(&Tensor, &Tensor) -> R) -> R {
        self.same_tape(other);
        let nodes = self.tape.nodes.borrow();
        f(&nodes[self.id].value, &nodes[other.id].value)
    }

    fn with_value<R>(&self, f: impl FnOnce(&Tensor) -> R) -> R {
        let nodes = self.tape.nodes.borrow();
        f(&nodes[self.id].value)
    }

    pub fn add(&self, other: &Var<'t>) -> Result<Var<'t>> {
        let v = self.with_values(other, |a, b| a.add(b))?;
        Ok(self.binary(other, Op::Add(self.id, other.id), v))
    }

    pub fn sub(&self, other: &Var<'t>) -> Result<Var<'t>> {
        let v = self.with_values(other, |a, b| a.sub(b))?;
        Ok(self.binary(other, Op::Sub(self.id, other.id), v))
    }

    pub fn mul(&self, other: &Var<'t>) -> Result<Var<'t>> {
        let v = self.with_values(other, |a, b| a.mul(b))?;
        Ok(self.binary(other, Op::Mul(self.id, other.id), v))
    }

    pub fn matmul(&self, other: &Var<'t>) -> Result<Var<'t>> {
        let v = self.with_values(other, |a, b| a.matmul(b))?;
        Ok(self.binary(other, Op::Matmul(self.id, other.id), v))
    }

    pub fn reduce_sum(&self, axis: usize) -> Result<Var<'t>> {
        let v = self.with_value(|a| a.reduce_sum(axis))?;
        Ok(self.unary(Op::SumAxis(self.id, axis), v))
    }

    pub fn reduce_mean(&self, axis: usize) -> Result<Var<'t>> {
        let v = self.with_value(|a| a.reduce_mean(axis))?;
        Ok(self.unary(Op::MeanAxis(self.id, axis), v))
    }

    /// Sum of every element, as a rank-0 tensor.
    pub fn sum(&self) -> Var<'t> {
        let v = Tensor::scalar(self.with_value(Tensor::sum));
        self.unary(Op::SumAll(self.id), v)
    }

    pub fn scale(&self, c: f64) -> Var<'t> {
        let v = self.with_value(|a| a.map(|x| x * c));
        self.unary(Op::Scale(self.id, c), v)
    }

    pub fn relu(&self) -> Var<'t> {
        let v = self.with_value(|a| a.map(|x| x.max(0.0)));
        self.unary(Op::Relu(self.id), v)
    }

    pub fn tanh(&self) -> Var<'t> {
        let v = self.with_value(|a| a.map(f64::tanh));
        self.unary(Op::Tanh(self.id), v)
    }

    pub fn sigmoid(&self) -> Var<'t> {
        let v = self.with_value(|a| a.map(sigmoid));
        self.unary(Op::Sigmoid(self.id), v)
    }

    /// Per-column standardization of a `[batch, features]` node with batch
    /// statistics and population variance. Returns the node plus the batch
    /// mean and variance so callers can update running statistics.
    pub fn batch_norm(&self, epsilon: f64) -> Result<(Var<'t>, Vec<f64>, Vec<f64>)> {
        let (out, inv_std, mean, var) = self.with_value(|x| standardize(x, epsilon))?;
        let node = self.unary(
            Op::BatchNorm {
                input: self.id,
                inv_std,
            },
            out,
        );
        Ok((node, mean, var))
    }

    /// Mean over the batch of `-log softmax(logits)[target]`.
    pub fn softmax_cross_entropy(&self, targets: &[usize]) -> Result<Var<'t>> {
        let (loss, probs, complement) = self.with_value(|z| softmax_xent(z, targets))?;
        Ok(self.unary(
            Op::SoftmaxCrossEntropy {
                input: self.id,
                targets: targets.to_vec(),
                probs,
                target_complement: complement,
            },
            Tensor::scalar(loss),
        ))
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

type Standardized = (Tensor, Vec<f64>, Vec<f64>, Vec<f64>);

fn standardize(x: &Tensor, epsilon: f64) -> Result<Standardized> {
    let (rows, cols) = x.dims2("batch_norm")?;
    if rows < 2 {
        return Err(TensorError::BatchTooSmall(rows));
    }
    let n = rows as f64;
    let mean: Vec<f64> = (0..cols)
        .map(|c| (0..rows).map(|r| x.data()[r * cols + c]).sum::<f64>() / n)
        .collect();
    let var: Vec<f64> = (0..cols)
        .map(|c| {
            (0..rows)
                .map(|r| (x.data()[r * cols + c] - mean[c]).powi(2))
                .sum::<f64>()
                / n
        })
        .collect();
    let mut inv_std = Vec::with_capacity(cols);
    for (c, &v) in var.iter().enumerate() {
        let denom = v + epsilon;
        if denom <= 0.0 {
            return Err(TensorError::ZeroVariance { feature: c });
        }
        inv_std.push(1.0 / denom.sqrt());
    }
    let mut out = x.data().to_vec();
    for r in 0..rows {
        for c in 0..cols {
            let k = r * cols + c;
            out[k] = (out[k] - mean[c]) * inv_std[c];
        }
    }
    Ok((Tensor::matrix(rows, cols, out)?, inv_std, mean, var))
}

fn softmax_xent(logits: &Tensor, targets: &[usize]) -> Result<(f64, Tensor, Vec<f64>)> {
    let (rows, cols) = logits.dims2("softmax_cross_entropy")?;
    if targets.len() != rows {
        return Err(TensorError::TargetCount(targets.len(), rows));
    }
    if let Some(&t) = targets.iter().find(|&&t| t >= cols) {
        return Err(TensorError::TargetOutOfRange {
            target: t,
            classes: cols,
        });
    }
    let mut probs = vec![0.0; rows * cols];
    let mut complement = Vec::with_capacity(rows);
    let mut loss = 0.0;
    for (r, &t) in targets.iter().enumerate() {
        let z = logits.row(r);
        let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + z.iter().map(|&v| (v - max).exp()).sum::<f64>().ln();
        let p = &mut probs[r * cols..(r + 1) * cols];
        for (pc, &zc) in p.iter_mut().zip(z) {
            *pc = (zc - lse).exp();
        }
        loss += lse - z[t];
        complement.push(
            p.iter()
                .enumerate()
                .filter(|&(c, _)| c != t)
                .map(|(_, &v)| v)
                .sum(),
        );
    }
    Ok((loss / rows as f64, Tensor::matrix(rows, cols, probs)?, complement))
}

/// Gradients produced by [`Tape::backward`].
#[derive(Debug, Clone, Default)]
pub struct Gradients {
    leaves: BTreeMap<usize, Tensor>,
    params: BTreeMap<ParamId, Tensor>,
}

impl Gradients {
    /// Gradients keyed by parameter only, for tests and synthetic problems.
    pub fn from_params(params: BTreeMap<ParamId, Tensor>) -> Self {
        Self {
            leaves: BTreeMap::new(),
            params,
        }
    }

    pub fn wrt(&self, var: &Var<'_>) -> Option<&Tensor> {
        self.leaves.get(&var.id)
    }

    pub fn get(&self, id: ParamId) -> Option<&Tensor> {
        self.params.get(&id)
    }

    pub fn insert(&mut self, id: ParamId, grad: Tensor) {
        self.params.insert(id, grad);
    }

    pub fn params(&self) -> &BTreeMap<ParamId, Tensor> {
        &self.params
    }

    pub fn into_params(self) -> BTreeMap<ParamId, Tensor> {
        self.params
    }

    pub fn all_finite(&self) -> bool {
        self.params.values().all(Tensor::all_finite) && self.leaves.values().all(Tensor::all_finite)
    }
}
