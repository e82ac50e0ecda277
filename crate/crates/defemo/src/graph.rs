//! Reverse-mode autodiff over a flat tape of graph nodes.
//!
//! Nodes are appended during the forward pass, so a node's inputs always
//! carry smaller indices and the backward pass is a single reverse sweep
//! over the tape. No fusion, no in-place mutation of node values.

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Handle into a [`Graph`]'s tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct NodeId(pub usize);

/// Primitive operations with their attributes.
#[derive(Clone, Debug)]
pub enum Op {
    /// Input tensor; `trainable` leaves receive gradients.
    Leaf { name: String, trainable: bool },
    /// 2-D matrix product or batched 3-D product.
    MatMul,
    /// Elementwise add; the second input may be a last-axis bias or a scalar.
    Add,
    /// Elementwise product, same shapes.
    Mul,
    /// Row gather from a 2-D table; output is `[ids.len(), cols]`.
    EmbeddingGather { ids: Vec<usize> },
    /// Normalize over the last axis; inputs are (x, gain, bias).
    LayerNorm { eps: f64 },
    /// Softmax over the last axis.
    Softmax,
    Gelu,
    Tanh,
    Sigmoid,
    /// Inverted dropout, active only in train mode; mask derived from `seed`.
    Dropout { rate: f64, seed: u64 },
    Concat { axis: usize },
    Slice { axis: usize, start: usize, end: usize },
    Scale { factor: f64 },
    Transpose { perm: Vec<usize> },
    Reshape { shape: Vec<usize> },
    /// Per-row softmax cross-entropy against integer targets; `[N, C] -> [N]`.
    CrossEntropyWithLogits { targets: Vec<usize> },
    /// Elementwise sigmoid BCE; inputs are (logits, targets in {0,1}).
    BinaryCrossEntropyWithLogits,
    /// Mean over all elements, producing a scalar.
    Mean,
}

impl Op {
    pub fn name(&self) -> &'static str {
        match self {
            Op::Leaf { .. } => "leaf",
            Op::MatMul => "matmul",
            Op::Add => "add",
            Op::Mul => "mul",
            Op::EmbeddingGather { .. } => "embedding_gather",
            Op::LayerNorm { .. } => "layer_norm",
            Op::Softmax => "softmax",
            Op::Gelu => "gelu",
            Op::Tanh => "tanh",
            Op::Sigmoid => "sigmoid",
            Op::Dropout { .. } => "dropout",
            Op::Concat { .. } => "concat",
            Op::Slice { .. } => "slice",
            Op::Scale { .. } => "scale",
            Op::Transpose { .. } => "transpose",
            Op::Reshape { .. } => "reshape",
            Op::CrossEntropyWithLogits { .. } => "cross_entropy_with_logits",
            Op::BinaryCrossEntropyWithLogits => "binary_cross_entropy_with_logits",
            Op::Mean => "mean",
        }
    }
}

pub struct Node<T> {
    pub op: Op,
    pub inputs: Vec<NodeId>,
    pub value: Tensor<T>,
    pub grad: Option<Tensor<T>>,
}

/// Define-by-run computation graph.
pub struct Graph<T: Scalar> {
    nodes: Vec<Node<T>>,
    train_mode: bool,
}

impl<T: Scalar> Graph<T> {
    pub fn new(train_mode: bool) -> Self {
        Graph { nodes: Vec::new(), train_mode }
    }

    pub fn train_mode(&self) -> bool {
        self.train_mode
    }

    pub fn value(&self, id: NodeId) -> &Tensor<T> {
        &self.nodes[id.0].value
    }

    pub fn grad(&self, id: NodeId) -> Option<&Tensor<T>> {
        self.nodes[id.0].grad.as_ref()
    }

    /// Gradient of a leaf, zero-filled when the leaf is off the loss path.
    pub fn grad_or_zero(&self, id: NodeId) -> Tensor<T> {
        let node = &self.nodes[id.0];
        node.grad.clone().unwrap_or_else(|| Tensor::zeros(node.value.shape()))
    }

    pub fn leaf(&mut self, name: impl Into<String>, value: Tensor<T>, trainable: bool) -> NodeId {
        self.push(Op::Leaf { name: name.into(), trainable }, vec![], value)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> NodeId {
        self.leaf("const", value, false)
    }

    fn push(&mut self, op: Op, inputs: Vec<NodeId>, value: Tensor<T>) -> NodeId {
        let id = NodeId(self.nodes.len());
        self.nodes.push(Node { op, inputs, value, grad: None });
        id
    }

    /// Apply a primitive: validate shapes, compute the forward value,
    /// reject non-finite results.
    pub fn apply(&mut self, op: Op, inputs: &[NodeId]) -> Result<NodeId> {
        let vals: Vec<&Tensor<T>> = inputs.iter().map(|&i| &self.nodes[i.0].value).collect();
        let value = forward(&op, &vals, self.train_mode)?;
        if !value.is_finite() {
            return Err(Error::Numeric {
                op: op.name().to_string(),
                detail: Some(format!("inputs: {:?}", vals.iter().map(|v| v.shape()).collect::<Vec<_>>())),
            });
        }
        Ok(self.push(op, inputs.to_vec(), value))
    }

    // Convenience constructors.

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.apply(Op::MatMul, &[a, b])
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.apply(Op::Add, &[a, b])
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.apply(Op::Mul, &[a, b])
    }

    pub fn softmax(&mut self, x: NodeId) -> Result<NodeId> {
        self.apply(Op::Softmax, &[x])
    }

    pub fn gelu(&mut self, x: NodeId) -> Result<NodeId> {
        self.apply(Op::Gelu, &[x])
    }

    pub fn tanh(&mut self, x: NodeId) -> Result<NodeId> {
        self.apply(Op::Tanh, &[x])
    }

    pub fn sigmoid(&mut self, x: NodeId) -> Result<NodeId> {
        self.apply(Op::Sigmoid, &[x])
    }

    pub fn layer_norm(&mut self, x: NodeId, gain: NodeId, bias: NodeId) -> Result<NodeId> {
        self.apply(Op::LayerNorm { eps: 1e-5 }, &[x, gain, bias])
    }

    pub fn dropout(&mut self, x: NodeId, rate: f64, seed: u64) -> Result<NodeId> {
        self.apply(Op::Dropout { rate, seed }, &[x])
    }

    pub fn scale(&mut self, x: NodeId, factor: f64) -> Result<NodeId> {
        self.apply(Op::Scale { factor }, &[x])
    }

    pub fn reshape(&mut self, x: NodeId, shape: Vec<usize>) -> Result<NodeId> {
        self.apply(Op::Reshape { shape }, &[x])
    }

    pub fn transpose(&mut self, x: NodeId, perm: Vec<usize>) -> Result<NodeId> {
        self.apply(Op::Transpose { perm }, &[x])
    }

    pub fn slice(&mut self, x: NodeId, axis: usize, start: usize, end: usize) -> Result<NodeId> {
        self.apply(Op::Slice { axis, start, end }, &[x])
    }

    pub fn concat(&mut self, xs: &[NodeId], axis: usize) -> Result<NodeId> {
        self.apply(Op::Concat { axis }, xs)
    }

    pub fn embedding_gather(&mut self, table: NodeId, ids: Vec<usize>) -> Result<NodeId> {
        self.apply(Op::EmbeddingGather { ids }, &[table])
    }

    pub fn mean(&mut self, x: NodeId) -> Result<NodeId> {
        self.apply(Op::Mean, &[x])
    }

    pub fn cross_entropy_with_logits(&mut self, logits: NodeId, targets: Vec<usize>) -> Result<NodeId> {
        self.apply(Op::CrossEntropyWithLogits { targets }, &[logits])
    }

    pub fn bce_with_logits(&mut self, logits: NodeId, targets: NodeId) -> Result<NodeId> {
        self.apply(Op::BinaryCrossEntropyWithLogits, &[logits, targets])
    }

    /// `x @ w + b` for 2-D `x`.
    pub fn linear(&mut self, x: NodeId, w: NodeId, b: NodeId) -> Result<NodeId> {
        let y = self.matmul(x, w)?;
        self.add(y, b)
    }

    /// Reverse sweep from a scalar loss. Fills `grad` for every node on the
    /// path; trainable leaves off the path keep `grad = None` (read them via
    /// [`Graph::grad_or_zero`]).
    pub fn backward(&mut self, loss: NodeId) -> Result<()> {
        if self.nodes[loss.0].value.len() != 1 {
            return Err(Error::shape(
                "backward",
                format!("loss must be scalar, got shape {:?}", self.nodes[loss.0].value.shape()),
            ));
        }
        let seed_shape = self.nodes[loss.0].value.shape().to_vec();
        self.nodes[loss.0].grad = Some(Tensor::filled(&seed_shape, T::one()));

        for i in (0..=loss.0).rev() {
            let Some(upstream) = self.nodes[i].grad.clone() else { continue };
            if self.nodes[i].inputs.is_empty() {
                continue;
            }
            let (op, inputs) = (self.nodes[i].op.clone(), self.nodes[i].inputs.clone());
            let out_value = &self.nodes[i].value;
            let in_values: Vec<Tensor<T>> =
                inputs.iter().map(|&j| self.nodes[j.0].value.clone()).collect();
            let grads = vjp(&op, &in_values, out_value, &upstream, self.train_mode)?;
            debug_assert_eq!(grads.len(), inputs.len());
            for (input, g) in inputs.iter().zip(grads) {
                match &mut self.nodes[input.0].grad {
                    Some(acc) => acc.add_assign(&g),
                    slot @ None => *slot = Some(g),
                }
            }
        }
        Ok(())
    }
}

fn shape_err<T>(op: &Op, msg: String) -> Result<T> {
    Err(Error::shape(op.name(), msg))
}

/// Forward kernel for each primitive.
fn forward<T: Scalar>(op: &Op, inputs: &[&Tensor<T>], train: bool) -> Result<Tensor<T>> {
    match op {
        Op::Leaf { .. } => unreachable!("leaves are not applied"),
        Op::MatMul => {
            let [a, b] = two(op, inputs)?;
            matmul_forward(op, a, b)
        }
        Op::Add => {
            let [a, b] = two(op, inputs)?;
            add_forward(op, a, b)
        }
        Op::Mul => {
            let [a, b] = two(op, inputs)?;
            if a.shape() != b.shape() {
                return shape_err(op, format!("{:?} vs {:?}", a.shape(), b.shape()));
            }
            a.zip_map(b, |x, y| x * y)
        }
        Op::EmbeddingGather { ids } => {
            let [table] = one(op, inputs)?;
            if table.rank() != 2 {
                return shape_err(op, format!("table must be 2-D, got {:?}", table.shape()));
            }
            let (rows, cols) = (table.shape()[0], table.shape()[1]);
            let mut data = Vec::with_capacity(ids.len() * cols);
            for &id in ids {
                if id >= rows {
                    return shape_err(op, format!("id {} out of range for {} rows", id, rows));
                }
                data.extend_from_slice(&table.data()[id * cols..(id + 1) * cols]);
            }
            Tensor::new(vec![ids.len(), cols], data)
        }
        Op::LayerNorm { eps } => {
            let [x, gain, bias] = three(op, inputs)?;
            let h = *x.shape().last().ok_or_else(|| Error::shape(op.name(), "rank 0 input"))?;
            if gain.shape() != [h] || bias.shape() != [h] {
                return shape_err(op, format!(
                    "gain/bias must be [{}], got {:?} and {:?}", h, gain.shape(), bias.shape()
                ));
            }
            let eps = T::from_f64(*eps);
            let mut out = vec![T::zero(); x.len()];
            for (r, row) in x.data().chunks(h).enumerate() {
                let n = T::from_f64(h as f64);
                let mean = row.iter().copied().sum::<T>() / n;
                let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
                let inv_std = T::one() / (var + eps).sqrt();
                for (c, &v) in row.iter().enumerate() {
                    out[r * h + c] = gain.data()[c] * (v - mean) * inv_std + bias.data()[c];
                }
            }
            Tensor::new(x.shape().to_vec(), out)
        }
        Op::Softmax => {
            let [x] = one(op, inputs)?;
            let h = *x.shape().last().ok_or_else(|| Error::shape(op.name(), "rank 0 input"))?;
            let mut out = vec![T::zero(); x.len()];
            for (r, row) in x.data().chunks(h).enumerate() {
                let max = row.iter().copied().fold(T::neg_infinity(), T::max);
                let mut sum = T::zero();
                for (c, &v) in row.iter().enumerate() {
                    let e = (v - max).exp();
                    out[r * h + c] = e;
                    sum += e;
                }
                for c in 0..h {
                    out[r * h + c] /= sum;
                }
            }
            Tensor::new(x.shape().to_vec(), out)
        }
        Op::Gelu => {
            let [x] = one(op, inputs)?;
            Ok(x.map(gelu_tanh))
        }
        Op::Tanh => {
            let [x] = one(op, inputs)?;
            Ok(x.map(|v| v.tanh()))
        }
        Op::Sigmoid => {
            let [x] = one(op, inputs)?;
            Ok(x.map(sigmoid))
        }
        Op::Dropout { rate, seed } => {
            let [x] = one(op, inputs)?;
            if !(0.0..1.0).contains(rate) {
                return Err(Error::Config(format!("dropout rate {} outside [0,1)", rate)));
            }
            if !train || *rate == 0.0 {
                return Ok((*x).clone());
            }
            let mask = dropout_mask(x.len(), *rate, *seed);
            let keep_scale = T::from_f64(1.0 / (1.0 - rate));
            let data = x
                .data()
                .iter()
                .zip(&mask)
                .map(|(&v, &keep)| if keep { v * keep_scale } else { T::zero() })
                .collect();
            Tensor::new(x.shape().to_vec(), data)
        }
        Op::Concat { axis } => concat_forward(op, inputs, *axis),
        Op::Slice { axis, start, end } => {
            let [x] = one(op, inputs)?;
            slice_forward(op, x, *axis, *start, *end)
        }
        Op::Scale { factor } => {
            let [x] = one(op, inputs)?;
            let f = T::from_f64(*factor);
            Ok(x.map(|v| v * f))
        }
        Op::Transpose { perm } => {
            let [x] = one(op, inputs)?;
            transpose_forward(op, x, perm)
        }
        Op::Reshape { shape } => {
            let [x] = one(op, inputs)?;
            if shape.iter().product::<usize>() != x.len() {
                return shape_err(op, format!("cannot reshape {:?} to {:?}", x.shape(), shape));
            }
            x.reshaped(shape.clone())
        }
        Op::CrossEntropyWithLogits { targets } => {
            let [z] = one(op, inputs)?;
            if z.rank() != 2 {
                return shape_err(op, format!("logits must be [N, C], got {:?}", z.shape()));
            }
            let (n, c) = (z.shape()[0], z.shape()[1]);
            if targets.len() != n {
                return shape_err(op, format!("{} targets for {} rows", targets.len(), n));
            }
            let mut out = Vec::with_capacity(n);
            for (row, &t) in z.data().chunks(c).zip(targets) {
                if t >= c {
                    return shape_err(op, format!("target {} out of range for {} classes", t, c));
                }
                let max = row.iter().copied().fold(T::neg_infinity(), T::max);
                let lse = max + row.iter().map(|&v| (v - max).exp()).sum::<T>().ln();
                out.push(lse - row[t]);
            }
            Tensor::new(vec![n], out)
        }
        Op::BinaryCrossEntropyWithLogits => {
            let [z, t] = two(op, inputs)?;
            if z.shape() != t.shape() {
                return shape_err(op, format!("{:?} vs {:?}", z.shape(), t.shape()));
            }
            z.zip_map(t, bce_with_logits)
        }
        Op::Mean => {
            let [x] = one(op, inputs)?;
            if x.is_empty() {
                return shape_err(op, "mean of empty tensor".into());
            }
            let n = T::from_f64(x.len() as f64);
            Ok(Tensor::scalar(x.data().iter().copied().sum::<T>() / n))
        }
    }
}

/// Vector-Jacobian product per primitive; returns one gradient per input.
fn vjp<T: Scalar>(
    op: &Op,
    inputs: &[Tensor<T>],
    out: &Tensor<T>,
    upstream: &Tensor<T>,
    train: bool,
) -> Result<Vec<Tensor<T>>> {
    match op {
        Op::Leaf { .. } => Ok(vec![]),
        Op::MatMul => matmul_vjp(&inputs[0], &inputs[1], upstream),
        Op::Add => {
            let ga = upstream.clone();
            let gb = reduce_to_shape(upstream, inputs[1].shape());
            Ok(vec![ga, gb])
        }
        Op::Mul => Ok(vec![
            upstream.zip_map(&inputs[1], |u, b| u * b)?,
            upstream.zip_map(&inputs[0], |u, a| u * a)?,
        ]),
        Op::EmbeddingGather { ids } => {
            let table = &inputs[0];
            let cols = table.shape()[1];
            let mut grad = Tensor::zeros(table.shape());
            for (i, &id) in ids.iter().enumerate() {
                let src = &upstream.data()[i * cols..(i + 1) * cols];
                let dst = &mut grad.data_mut()[id * cols..(id + 1) * cols];
                for (d, &s) in dst.iter_mut().zip(src) {
                    *d += s;
                }
            }
            Ok(vec![grad])
        }
        Op::LayerNorm { eps } => layer_norm_vjp(&inputs[0], &inputs[1], upstream, *eps),
        Op::Softmax => {
            let h = *out.shape().last().unwrap();
            let mut grad = vec![T::zero(); out.len()];
            for r in 0..out.len() / h {
                let y = &out.data()[r * h..(r + 1) * h];
                let dy = &upstream.data()[r * h..(r + 1) * h];
                let dot = y.iter().zip(dy).map(|(&a, &b)| a * b).sum::<T>();
                for c in 0..h {
                    grad[r * h + c] = y[c] * (dy[c] - dot);
                }
            }
            Ok(vec![Tensor::new(out.shape().to_vec(), grad)?])
        }
        Op::Gelu => Ok(vec![upstream.zip_map(&inputs[0], |u, x| u * gelu_tanh_grad(x))?]),
        Op::Tanh => Ok(vec![upstream.zip_map(out, |u, y| u * (T::one() - y * y))?]),
        Op::Sigmoid => Ok(vec![upstream.zip_map(out, |u, y| u * y * (T::one() - y))?]),
        Op::Dropout { rate, seed } => {
            if !train || *rate == 0.0 {
                return Ok(vec![upstream.clone()]);
            }
            let mask = dropout_mask(inputs[0].len(), *rate, *seed);
            let keep_scale = T::from_f64(1.0 / (1.0 - rate));
            let data = upstream
                .data()
                .iter()
                .zip(&mask)
                .map(|(&u, &keep)| if keep { u * keep_scale } else { T::zero() })
                .collect();
            Ok(vec![Tensor::new(upstream.shape().to_vec(), data)?])
        }
        Op::Concat { axis } => concat_vjp(inputs, upstream, *axis),
        Op::Slice { axis, start, end } => {
            let x = &inputs[0];
            let mut grad = Tensor::zeros(x.shape());
            scatter_slice(&mut grad, upstream, *axis, *start, *end);
            Ok(vec![grad])
        }
        Op::Scale { factor } => {
            let f = T::from_f64(*factor);
            Ok(vec![upstream.map(|u| u * f)])
        }
        Op::Transpose { perm } => {
            let inverse = invert_perm(perm);
            Ok(vec![transpose_forward(op, upstream, &inverse)?])
        }
        Op::Reshape { .. } => Ok(vec![upstream.reshaped(inputs[0].shape().to_vec())?]),
        Op::CrossEntropyWithLogits { targets } => {
            let z = &inputs[0];
            let (n, c) = (z.shape()[0], z.shape()[1]);
            let mut grad = vec![T::zero(); z.len()];
            for r in 0..n {
                let row = &z.data()[r * c..(r + 1) * c];
                let max = row.iter().copied().fold(T::neg_infinity(), T::max);
                let sum = row.iter().map(|&v| (v - max).exp()).sum::<T>();
                let u = upstream.data()[r];
                for j in 0..c {
                    let p = (row[j] - max).exp() / sum;
                    let indicator = if j == targets[r] { T::one() } else { T::zero() };
                    grad[r * c + j] = u * (p - indicator);
                }
            }
            Ok(vec![Tensor::new(z.shape().to_vec(), grad)?])
        }
        Op::BinaryCrossEntropyWithLogits => {
            let (z, t) = (&inputs[0], &inputs[1]);
            let mut gz = vec![T::zero(); z.len()];
            let mut gt = vec![T::zero(); z.len()];
            for i in 0..z.len() {
                let u = upstream.data()[i];
                gz[i] = u * (sigmoid(z.data()[i]) - t.data()[i]);
                gt[i] = -u * z.data()[i];
            }
            Ok(vec![
                Tensor::new(z.shape().to_vec(), gz)?,
                Tensor::new(z.shape().to_vec(), gt)?,
            ])
        }
        Op::Mean => {
            let x = &inputs[0];
            let g = upstream.item() / T::from_f64(x.len() as f64);
            Ok(vec![Tensor::filled(x.shape(), g)])
        }
    }
}

// ---- kernels ----

fn one<'a, T>(op: &Op, inputs: &[&'a Tensor<T>]) -> Result<[&'a Tensor<T>; 1]> {
    match inputs {
        [a] => Ok([a]),
        _ => shape_err(op, format!("expected 1 input, got {}", inputs.len())),
    }
}

fn two<'a, T>(op: &Op, inputs: &[&'a Tensor<T>]) -> Result<[&'a Tensor<T>; 2]> {
    match inputs {
        [a, b] => Ok([a, b]),
        _ => shape_err(op, format!("expected 2 inputs, got {}", inputs.len())),
    }
}

fn three<'a, T>(op: &Op, inputs: &[&'a Tensor<T>]) -> Result<[&'a Tensor<T>; 3]> {
    match inputs {
        [a, b, c] => Ok([a, b, c]),
        _ => shape_err(op, format!("expected 3 inputs, got {}", inputs.len())),
    }
}

fn sigmoid<T: Scalar>(z: T) -> T {
    if z >= T::zero() {
        T::one() / (T::one() + (-z).exp())
    } else {
        let e = z.exp();
        e / (T::one() + e)
    }
}

/// Numerically stable `max(z,0) - z*t + ln(1 + exp(-|z|))`.
fn bce_with_logits<T: Scalar>(z: T, t: T) -> T {
    z.max(T::zero()) - z * t + (T::one() + (-z.abs()).exp()).ln()
}

fn gelu_tanh<T: Scalar>(x: T) -> T {
    let c = T::from_f64(0.7978845608028654); // sqrt(2/pi)
    let k = T::from_f64(0.044715);
    let half = T::from_f64(0.5);
    half * x * (T::one() + (c * (x + k * x * x * x)).tanh())
}

fn gelu_tanh_grad<T: Scalar>(x: T) -> T {
    let c = T::from_f64(0.7978845608028654);
    let k = T::from_f64(0.044715);
    let half = T::from_f64(0.5);
    let three = T::from_f64(3.0);
    let u = c * (x + k * x * x * x);
    let t = u.tanh();
    let du = c * (T::one() + three * k * x * x);
    half * (T::one() + t) + half * x * (T::one() - t * t) * du
}

fn dropout_mask(len: usize, rate: f64, seed: u64) -> Vec<bool> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..len).map(|_| rng.gen::<f64>() >= rate).collect()
}

fn matmul_forward<T: Scalar>(op: &Op, a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    match (a.rank(), b.rank()) {
        (2, 2) => {
            let (m, k) = (a.shape()[0], a.shape()[1]);
            let (k2, n) = (b.shape()[0], b.shape()[1]);
            if k != k2 {
                return shape_err(op, format!("{:?} x {:?}", a.shape(), b.shape()));
            }
            let mut out = vec![T::zero(); m * n];
            mat2(a.data(), b.data(), &mut out, m, k, n);
            Tensor::new(vec![m, n], out)
        }
        (3, 3) => {
            let (ba, m, k) = (a.shape()[0], a.shape()[1], a.shape()[2]);
            let (bb, k2, n) = (b.shape()[0], b.shape()[1], b.shape()[2]);
            if ba != bb || k != k2 {
                return shape_err(op, format!("{:?} x {:?}", a.shape(), b.shape()));
            }
            let mut out = vec![T::zero(); ba * m * n];
            for i in 0..ba {
                mat2(
                    &a.data()[i * m * k..(i + 1) * m * k],
                    &b.data()[i * k * n..(i + 1) * k * n],
                    &mut out[i * m * n..(i + 1) * m * n],
                    m,
                    k,
                    n,
                );
            }
            Tensor::new(vec![ba, m, n], out)
        }
        _ => shape_err(op, format!("unsupported ranks {:?} x {:?}", a.shape(), b.shape())),
    }
}

fn mat2<T: Scalar>(a: &[T], b: &[T], out: &mut [T], m: usize, k: usize, n: usize) {
    for i in 0..m {
        for p in 0..k {
            let av = a[i * k + p];
            if av == T::zero() {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            let orow = &mut out[i * n..(i + 1) * n];
            for j in 0..n {
                orow[j] += av * brow[j];
            }
        }
    }
}

fn matmul_vjp<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, g: &Tensor<T>) -> Result<Vec<Tensor<T>>> {
    let op = Op::MatMul;
    // dA = g . B^T, dB = A^T . g
    let bt = transpose_last_two(b);
    let at = transpose_last_two(a);
    let ga = matmul_forward(&op, g, &bt)?;
    let gb = matmul_forward(&op, &at, g)?;
    Ok(vec![ga, gb])
}

fn transpose_last_two<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let r = x.rank();
    let mut perm: Vec<usize> = (0..r).collect();
    perm.swap(r - 1, r - 2);
    transpose_forward(&Op::Transpose { perm: perm.clone() }, x, &perm).expect("rank >= 2")
}

fn add_forward<T: Scalar>(op: &Op, a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    if a.shape() == b.shape() {
        return a.zip_map(b, |x, y| x + y);
    }
    // broadcast: b is a last-axis bias or a scalar
    if b.len() == 1 {
        let bv = b.data()[0];
        return Ok(a.map(|x| x + bv));
    }
    let h = *a.shape().last().unwrap_or(&0);
    if b.shape() == [h] {
        let mut out = a.data().to_vec();
        for (i, v) in out.iter_mut().enumerate() {
            *v += b.data()[i % h];
        }
        return Tensor::new(a.shape().to_vec(), out);
    }
    shape_err(op, format!("cannot broadcast {:?} + {:?}", a.shape(), b.shape()))
}

/// Sum an upstream gradient down to a broadcast input's shape.
fn reduce_to_shape<T: Scalar>(g: &Tensor<T>, shape: &[usize]) -> Tensor<T> {
    if g.shape() == shape {
        return g.clone();
    }
    let mut out = Tensor::zeros(shape);
    let n = out.len().max(1);
    for (i, &v) in g.data().iter().enumerate() {
        out.data_mut()[i % n] += v;
    }
    out
}

fn concat_forward<T: Scalar>(op: &Op, inputs: &[&Tensor<T>], axis: usize) -> Result<Tensor<T>> {
    let first = inputs.first().ok_or_else(|| Error::shape(op.name(), "no inputs"))?;
    let rank = first.rank();
    if axis >= rank {
        return shape_err(op, format!("axis {} out of range for rank {}", axis, rank));
    }
    for x in inputs {
        if x.rank() != rank {
            return shape_err(op, "rank mismatch".into());
        }
        for d in 0..rank {
            if d != axis && x.shape()[d] != first.shape()[d] {
                return shape_err(op, format!("{:?} vs {:?} at axis {}", x.shape(), first.shape(), d));
            }
        }
    }
    let mut out_shape = first.shape().to_vec();
    out_shape[axis] = inputs.iter().map(|x| x.shape()[axis]).sum();
    let outer: usize = first.shape()[..axis].iter().product();
    let inner: usize = first.shape()[axis + 1..].iter().product();
    let mut data = Vec::with_capacity(out_shape.iter().product());
    for o in 0..outer {
        for x in inputs {
            let ax = x.shape()[axis];
            let chunk = ax * inner;
            data.extend_from_slice(&x.data()[o * chunk..(o + 1) * chunk]);
        }
    }
    Tensor::new(out_shape, data)
}

fn concat_vjp<T: Scalar>(inputs: &[Tensor<T>], g: &Tensor<T>, axis: usize) -> Result<Vec<Tensor<T>>> {
    let mut grads: Vec<Tensor<T>> = inputs.iter().map(|x| Tensor::zeros(x.shape())).collect();
    let outer: usize = inputs[0].shape()[..axis].iter().product();
    let inner: usize = inputs[0].shape()[axis + 1..].iter().product();
    let mut offset = 0;
    for o in 0..outer {
        for (x, gx) in inputs.iter().zip(grads.iter_mut()) {
            let chunk = x.shape()[axis] * inner;
            gx.data_mut()[o * chunk..(o + 1) * chunk]
                .copy_from_slice(&g.data()[offset..offset + chunk]);
            offset += chunk;
        }
    }
    Ok(grads)
}

fn slice_forward<T: Scalar>(
    op: &Op,
    x: &Tensor<T>,
    axis: usize,
    start: usize,
    end: usize,
) -> Result<Tensor<T>> {
    if axis >= x.rank() || start >= end || end > x.shape()[axis] {
        return shape_err(op, format!(
            "slice [{}, {}) on axis {} of {:?}", start, end, axis, x.shape()
        ));
    }
    let mut out_shape = x.shape().to_vec();
    out_shape[axis] = end - start;
    let outer: usize = x.shape()[..axis].iter().product();
    let inner: usize = x.shape()[axis + 1..].iter().product();
    let ax = x.shape()[axis];
    let mut data = Vec::with_capacity(out_shape.iter().product());
    for o in 0..outer {
        let base = o * ax * inner;
        data.extend_from_slice(&x.data()[base + start * inner..base + end * inner]);
    }
    Tensor::new(out_shape, data)
}

fn scatter_slice<T: Scalar>(
    grad: &mut Tensor<T>,
    g: &Tensor<T>,
    axis: usize,
    start: usize,
    end: usize,
) {
    let outer: usize = grad.shape()[..axis].iter().product();
    let inner: usize = grad.shape()[axis + 1..].iter().product();
    let ax = grad.shape()[axis];
    let chunk = (end - start) * inner;
    for o in 0..outer {
        let base = o * ax * inner + start * inner;
        grad.data_mut()[base..base + chunk].copy_from_slice(&g.data()[o * chunk..(o + 1) * chunk]);
    }
}

fn transpose_forward<T: Scalar>(op: &Op, x: &Tensor<T>, perm: &[usize]) -> Result<Tensor<T>> {
    let rank = x.rank();
    if perm.len() != rank {
        return shape_err(op, format!("perm {:?} for rank {}", perm, rank));
    }
    let mut seen = vec![false; rank];
    for &p in perm {
        if p >= rank || seen[p] {
            return shape_err(op, format!("invalid perm {:?}", perm));
        }
        seen[p] = true;
    }
    let in_shape = x.shape();
    let out_shape: Vec<usize> = perm.iter().map(|&p| in_shape[p]).collect();
    let in_strides = strides(in_shape);
    let out_strides = strides(&out_shape);
    let mut data = vec![T::zero(); x.len()];
    let mut idx = vec![0usize; rank];
    for (flat_out, slot) in data.iter_mut().enumerate() {
        // decode output index, map through perm to input offset
        let mut rem = flat_out;
        for d in 0..rank {
            idx[d] = rem / out_strides[d];
            rem %= out_strides[d];
        }
        let mut flat_in = 0;
        for d in 0..rank {
            flat_in += idx[d] * in_strides[perm[d]];
        }
        *slot = x.data()[flat_in];
    }
    Tensor::new(out_shape, data)
}

fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1usize; shape.len()];
    for d in (0..shape.len().saturating_sub(1)).rev() {
        s[d] = s[d + 1] * shape[d + 1];
    }
    s
}

fn invert_perm(perm: &[usize]) -> Vec<usize> {
    let mut inv = vec![0usize; perm.len()];
    for (i, &p) in perm.iter().enumerate() {
        inv[p] = i;
    }
    inv
}

fn layer_norm_vjp<T: Scalar>(
    x: &Tensor<T>,
    gain: &Tensor<T>,
    upstream: &Tensor<T>,
    eps: f64,
) -> Result<Vec<Tensor<T>>> {
    let h = *x.shape().last().unwrap();
    let n = T::from_f64(h as f64);
    let eps = T::from_f64(eps);
    let mut gx = vec![T::zero(); x.len()];
    let mut ggain = vec![T::zero(); h];
    let mut gbias = vec![T::zero(); h];
    for r in 0..x.len() / h {
        let row = &x.data()[r * h..(r + 1) * h];
        let dy = &upstream.data()[r * h..(r + 1) * h];
        let mean = row.iter().copied().sum::<T>() / n;
        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
        let inv_std = T::one() / (var + eps).sqrt();
        let xhat: Vec<T> = row.iter().map(|&v| (v - mean) * inv_std).collect();
        let gdy: Vec<T> = dy.iter().zip(gain.data()).map(|(&d, &g)| d * g).collect();
        let mean_gdy = gdy.iter().copied().sum::<T>() / n;
        let mean_gdy_xhat = gdy.iter().zip(&xhat).map(|(&a, &b)| a * b).sum::<T>() / n;
        for c in 0..h {
            gx[r * h + c] = (gdy[c] - mean_gdy - xhat[c] * mean_gdy_xhat) * inv_std;
            ggain[c] += dy[c] * xhat[c];
            gbias[c] += dy[c];
        }
    }
    Ok(vec![
        Tensor::new(x.shape().to_vec(), gx)?,
        Tensor::new(vec![h], ggain)?,
        Tensor::new(vec![h], gbias)?,
    ])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t2(rows: usize, cols: usize, data: &[f64]) -> Tensor<f64> {
        Tensor::new(vec![rows, cols], data.to_vec()).unwrap()
    }

    #[test]
    fn matmul_identity() {
        let mut g = Graph::new(false);
        let a = g.constant(t2(2, 2, &[1.0, 2.0, 3.0, 4.0]));
        let i = g.constant(t2(2, 2, &[1.0, 0.0, 0.0, 1.0]));
        let c = g.matmul(a, i).unwrap();
        assert_eq!(g.value(c).data(), &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn softmax_symmetry_and_normalization() {
        let mut g = Graph::<f64>::new(false);
        let x = g.constant(Tensor::new(vec![1, 3], vec![0.0, 0.0, 0.0]).unwrap());
        let y = g.softmax(x).unwrap();
        for &v in g.value(y).data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-12);
        }
        let x = g.constant(Tensor::new(vec![2, 4], vec![1.0, -2.0, 0.5, 3.0, 0.0, 0.0, 9.0, -9.0]).unwrap());
        let y = g.softmax(x).unwrap();
        for row in g.value(y).data().chunks(4) {
            let s: f64 = row.iter().sum();
            assert!((s - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn bce_at_zero_logit_is_ln2() {
        let mut g = Graph::new(false);
        let z = g.constant(Tensor::scalar(0.0));
        let t = g.constant(Tensor::scalar(1.0));
        let l = g.bce_with_logits(z, t).unwrap();
        assert!((g.value(l).item() - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn mean_of_square_gradient() {
        // loss = mean(x*x), x = [3] -> dloss/dx = 2x = 6
        let mut g = Graph::new(false);
        let x = g.leaf("x", Tensor::from_vec(vec![3.0]), true);
        let sq = g.mul(x, x).unwrap();
        let loss = g.mean(sq).unwrap();
        g.backward(loss).unwrap();
        assert_eq!(g.grad(x).unwrap().data(), &[6.0]);
    }

    #[test]
    fn unreachable_parameter_gets_zero_grad() {
        let mut g = Graph::new(false);
        let x = g.leaf("x", Tensor::from_vec(vec![1.0, 2.0]), true);
        let w = g.leaf("w", Tensor::from_vec(vec![5.0]), true);
        let loss = g.mean(x).unwrap();
        g.backward(loss).unwrap();
        assert!(g.grad(w).is_none());
        assert_eq!(g.grad_or_zero(w).data(), &[0.0]);
    }

    #[test]
    fn backward_rejects_non_scalar_loss() {
        let mut g = Graph::new(false);
        let x = g.leaf("x", Tensor::from_vec(vec![1.0, 2.0]), true);
        assert!(g.backward(x).is_err());
    }

    #[test]
    fn sum_of_parameters_gives_all_ones_grad() {
        let mut g = Graph::<f64>::new(false);
        let x = g.leaf("x", Tensor::from_vec(vec![1.0, 2.0, 3.0, 4.0]), true);
        let m = g.mean(x).unwrap();
        let loss = g.scale(m, 4.0).unwrap(); // sum = 4 * mean
        g.backward(loss).unwrap();
        for &v in g.grad(x).unwrap().data() {
            assert!((v - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_cross_entropy_grad_is_probs_minus_onehot() {
        let mut g = Graph::new(true);
        let z = g.leaf("z", t2(1, 3, &[1.0, 2.0, 0.5]), true);
        let ce = g.cross_entropy_with_logits(z, vec![1]).unwrap();
        let loss = g.mean(ce).unwrap();
        g.backward(loss).unwrap();
        let sm = {
            let mut g2 = Graph::new(false);
            let z2 = g2.constant(t2(1, 3, &[1.0, 2.0, 0.5]));
            let s = g2.softmax(z2).unwrap();
            g2.value(s).data().to_vec()
        };
        let grad = g.grad(z).unwrap().data();
        for j in 0..3 {
            let expect = sm[j] - if j == 1 { 1.0 } else { 0.0 };
            assert!((grad[j] - expect).abs() < 1e-10, "j={} {} vs {}", j, grad[j], expect);
        }
    }

    #[test]
    fn dropout_rate_zero_is_identity_and_seeded_mask_reproducible() {
        let x = Tensor::from_vec(vec![1.0f64, 2.0, 3.0, 4.0]);
        let mut g = Graph::new(true);
        let xid = g.constant(x.clone());
        let y = g.dropout(xid, 0.0, 42).unwrap();
        assert_eq!(g.value(y).data(), x.data());

        let run = |seed: u64| {
            let mut g = Graph::new(true);
            let xid = g.constant(Tensor::from_vec(vec![1.0f64; 64]));
            let y = g.dropout(xid, 0.5, seed).unwrap();
            g.value(y).data().to_vec()
        };
        assert_eq!(run(7), run(7));
        assert_ne!(run(7), run(8));
    }

    #[test]
    fn shape_mismatch_names_the_op() {
        let mut g = Graph::new(false);
        let a = g.constant(t2(2, 3, &[0.0; 6]));
        let b = g.constant(t2(2, 3, &[0.0; 6]));
        let err = g.matmul(a, b).unwrap_err();
        assert!(err.to_string().contains("matmul"), "{}", err);
    }

    #[test]
    fn non_finite_output_reports_numeric_error() {
        let mut g = Graph::new(false);
        let big = g.constant(Tensor::from_vec(vec![1e308f64, 1e308]));
        let err = g.mul(big, big).unwrap_err();
        assert!(matches!(err, Error::Numeric { .. }), "{}", err);
    }

    #[test]
    fn sigmoid_output_in_open_unit_interval() {
        let mut g = Graph::new(false);
        let x = g.constant(Tensor::from_vec(vec![-30.0f64, -1.0, 0.0, 1.0, 30.0]));
        let y = g.sigmoid(x).unwrap();
        for &v in g.value(y).data() {
            assert!(v > 0.0 && v < 1.0);
        }
    }

    #[test]
    fn concat_slice_round_trip() {
        let mut g = Graph::new(false);
        let a = g.constant(t2(2, 2, &[1.0, 2.0, 3.0, 4.0]));
        let b = g.constant(t2(2, 3, &[5.0, 6.0, 7.0, 8.0, 9.0, 10.0]));
        let c = g.concat(&[a, b], 1).unwrap();
        assert_eq!(g.value(c).shape(), &[2, 5]);
        let back = g.slice(c, 1, 2, 5).unwrap();
        assert_eq!(g.value(back).data(), g.value(b).data());
    }

    #[test]
    fn transpose_3d_round_trip() {
        let data: Vec<f64> = (0..24).map(|v| v as f64).collect();
        let x = Tensor::new(vec![2, 3, 4], data.clone()).unwrap();
        let mut g = Graph::new(false);
        let xid = g.constant(x);
        let t = g.transpose(xid, vec![2, 0, 1]).unwrap();
        assert_eq!(g.value(t).shape(), &[4, 2, 3]);
        let back = g.transpose(t, vec![1, 2, 0]).unwrap();
        assert_eq!(g.value(back).data(), data.as_slice());
    }
}
