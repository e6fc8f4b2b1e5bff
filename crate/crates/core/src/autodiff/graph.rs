//! Tape of recorded operations and its reverse sweep.

use std::sync::atomic::{AtomicU32, Ordering};

use rand::Rng as _;

use super::kernels::{matmul, transpose};
use super::{Real, Tensor, TensorError};
use crate::rng::SeedStream;

static NEXT_GRAPH_ID: AtomicU32 = AtomicU32::new(0);

/// Whether batch-dependent layers use batch statistics and dropout.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Handle to a node of one particular [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var {
    graph: u32,
    index: usize,
}

/// Running statistics owned by a batch-norm layer.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNormState {
    pub running_mean: Vec<Real>,
    pub running_var: Vec<Real>,
}

impl BatchNormState {
    pub fn new(channels: usize) -> Self {
        Self {
            running_mean: vec![0.0; channels],
            running_var: vec![1.0; channels],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BatchNormConfig {
    /// Weight of the previous running value in the update.
    pub momentum: Real,
    pub eps: Real,
}

impl Default for BatchNormConfig {
    fn default() -> Self {
        Self {
            momentum: 0.9,
            eps: 1e-5,
        }
    }
}

enum Op {
    Leaf,
    MatMul(Var, Var),
    AddBias(Var, Var),
    Relu(Var),
    Dropout {
        x: Var,
        mask: Vec<Real>,
    },
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        normalized: Vec<Real>,
        inv_std: Vec<Real>,
        batch_stats: bool,
    },
    MaxOverPoints {
        x: Var,
        argmax: Vec<usize>,
    },
    SoftmaxCrossEntropy {
        logits: Var,
        labels: Vec<usize>,
        probs: Vec<Real>,
    },
    Sum(Var),
    Mul(Var, Var),
}

struct Node {
    value: Tensor,
    grad: Option<Vec<Real>>,
    requires_grad: bool,
    op: Op,
}

/// A single forward pass and its gradients. Nodes are appended in creation
/// order, so every input precedes its consumers and the reverse index order
/// is a reverse topological order.
pub struct Graph {
    id: u32,
    mode: Mode,
    nodes: Vec<Node>,
}

impl Graph {
    pub fn new(mode: Mode) -> Self {
        Self {
            id: NEXT_GRAPH_ID.fetch_add(1, Ordering::Relaxed),
            mode,
            nodes: Vec::new(),
        }
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn check(&self, v: Var) -> Result<usize, TensorError> {
        if v.graph != self.id || v.index >= self.nodes.len() {
            return Err(TensorError::DetachedGraph);
        }
        Ok(v.index)
    }

    fn node(&self, v: Var) -> &Node {
        &self.nodes[v.index]
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Var {
        debug_assert!(value.all_finite(), "non-finite value produced by forward op");
        let requires_grad = inputs.iter().any(|v| self.nodes[v.index].requires_grad);
        self.nodes.push(Node {
            value,
            grad: None,
            requires_grad,
            op,
        });
        Var {
            graph: self.id,
            index: self.nodes.len() - 1,
        }
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            grad: None,
            requires_grad,
            op: Op::Leaf,
        });
        Var {
            graph: self.id,
            index: self.nodes.len() - 1,
        }
    }

    /// Value of a node. Panics if `v` belongs to another graph.
    pub fn value(&self, v: Var) -> &Tensor {
        self.check(v).expect("variable belongs to another graph");
        &self.node(v).value
    }

    /// Accumulated gradient, present after [`Graph::backward`] reached `v`.
    pub fn grad(&self, v: Var) -> Option<&[Real]> {
        self.check(v).ok()?;
        self.node(v).grad.as_deref()
    }

    pub fn zero_grad(&mut self) {
        for node in &mut self.nodes {
            node.grad = None;
        }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.check(a)?;
        self.check(b)?;
        let (n, k) = self.node(a).value.dims2()?;
        let (k2, m) = self.node(b).value.dims2()?;
        if k != k2 {
            return Err(TensorError::ShapeMismatch(format!(
                "matmul inner dimensions {k} and {k2}"
            )));
        }
        let out = matmul(self.node(a).value.data(), self.node(b).value.data(), n, k, m);
        Ok(self.push(Tensor::matrix(n, m, out)?, Op::MatMul(a, b), &[a, b]))
    }

    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var, TensorError> {
        self.check(x)?;
        self.check(bias)?;
        let (n, m) = self.node(x).value.dims2()?;
        let b = self.node(bias).value.data();
        if b.len() != m {
            return Err(TensorError::ShapeMismatch(format!(
                "bias of length {} for {m} columns",
                b.len()
            )));
        }
        let mut out = self.node(x).value.data().to_vec();
        for row in out.chunks_exact_mut(m) {
            for (o, bv) in row.iter_mut().zip(b) {
                *o += bv;
            }
        }
        Ok(self.push(Tensor::matrix(n, m, out)?, Op::AddBias(x, bias), &[x, bias]))
    }

    pub fn relu(&mut self, x: Var) -> Result<Var, TensorError> {
        self.check(x)?;
        let t = &self.node(x).value;
        let out = t.data().iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect();
        let value = Tensor::new(t.shape().to_vec(), out)?;
        Ok(self.push(value, Op::Relu(x), &[x]))
    }

    /// Inverted dropout in train mode; the identity in eval mode.
    pub fn dropout(&mut self, x: Var, rate: Real, seed: u64) -> Result<Var, TensorError> {
        self.check(x)?;
        if !(0.0..1.0).contains(&rate) {
            return Err(TensorError::InvalidArgument(format!("dropout rate {rate}")));
        }
        if self.mode == Mode::Eval || rate == 0.0 {
            return Ok(x);
        }
        let t = &self.node(x).value;
        let keep = 1.0 / (1.0 - rate);
        let mut rng = SeedStream::new(seed).rng();
        let mask: Vec<Real> = (0..t.len())
            .map(|_| {
                if rng.random::<f64>() < rate as f64 {
                    0.0
                } else {
                    keep
                }
            })
            .collect();
        let out = t.data().iter().zip(&mask).map(|(v, m)| v * m).collect();
        let value = Tensor::new(t.shape().to_vec(), out)?;
        Ok(self.push(value, Op::Dropout { x, mask }, &[x]))
    }

    /// Per-column batch normalization of an `n × c` matrix. Train mode
    /// normalizes with batch statistics and updates `state`; eval mode uses
    /// the running statistics.
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        state: &mut BatchNormState,
        config: BatchNormConfig,
    ) -> Result<Var, TensorError> {
        self.check(x)?;
        self.check(gamma)?;
        self.check(beta)?;
        let (n, c) = self.node(x).value.dims2()?;
        let g = self.node(gamma).value.data();
        let b = self.node(beta).value.data();
        if g.len() != c || b.len() != c || state.running_mean.len() != c || state.running_var.len() != c {
            return Err(TensorError::ShapeMismatch(format!(
                "batch norm over {c} channels"
            )));
        }
        if n == 0 {
            return Err(TensorError::ShapeMismatch("batch norm over zero rows".into()));
        }
        let data = self.node(x).value.data();
        let batch_stats = self.mode == Mode::Train;
        let (mean, inv_std) = if batch_stats {
            let mut mean = vec![0.0; c];
            for row in data.chunks_exact(c) {
                for (m, v) in mean.iter_mut().zip(row) {
                    *m += v;
                }
            }
            let nf = n as Real;
            mean.iter_mut().for_each(|m| *m /= nf);
            let mut var = vec![0.0; c];
            for row in data.chunks_exact(c) {
                for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
                    let d = v - m;
                    *s += d * d;
                }
            }
            var.iter_mut().for_each(|s| *s /= nf);
            let correction = if n > 1 { nf / (nf - 1.0) } else { 1.0 };
            for j in 0..c {
                state.running_mean[j] =
                    config.momentum * state.running_mean[j] + (1.0 - config.momentum) * mean[j];
                state.running_var[j] = config.momentum * state.running_var[j]
                    + (1.0 - config.momentum) * var[j] * correction;
            }
            let inv_std: Vec<Real> = var.iter().map(|v| 1.0 / (v + config.eps).sqrt()).collect();
            (mean, inv_std)
        } else {
            let inv_std: Vec<Real> = state
                .running_var
                .iter()
                .map(|v| 1.0 / (v + config.eps).sqrt())
                .collect();
            (state.running_mean.clone(), inv_std)
        };
        let mut normalized = Vec::with_capacity(n * c);
        let mut out = Vec::with_capacity(n * c);
        for row in data.chunks_exact(c) {
            for j in 0..c {
                let xh = (row[j] - mean[j]) * inv_std[j];
                normalized.push(xh);
                out.push(g[j] * xh + b[j]);
            }
        }
        let value = Tensor::matrix(n, c, out)?;
        Ok(self.push(
            value,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                normalized,
                inv_std,
                batch_stats,
            },
            &[x, gamma, beta],
        ))
    }

    /// Per-channel maximum over consecutive groups of `points` rows: an
    /// `(b·points) × c` matrix becomes `b × c`.
    pub fn max_over_points(&mut self, x: Var, points: usize) -> Result<Var, TensorError> {
        self.check(x)?;
        let (n, c) = self.node(x).value.dims2()?;
        if points == 0 || n % points != 0 || n == 0 {
            return Err(TensorError::ShapeMismatch(format!(
                "{n} rows do not split into groups of {points}"
            )));
        }
        let groups = n / points;
        let data = self.node(x).value.data();
        let mut out = vec![0.0; groups * c];
        let mut argmax = vec![0usize; groups * c];
        for g in 0..groups {
            let base = g * points;
            out[g * c..(g + 1) * c].copy_from_slice(&data[base * c..(base + 1) * c]);
            argmax[g * c..(g + 1) * c].iter_mut().for_each(|a| *a = base);
            for r in base + 1..base + points {
                let row = &data[r * c..(r + 1) * c];
                for j in 0..c {
                    if row[j] > out[g * c + j] {
                        out[g * c + j] = row[j];
                        argmax[g * c + j] = r;
                    }
                }
            }
        }
        let value = Tensor::matrix(groups, c, out)?;
        Ok(self.push(value, Op::MaxOverPoints { x, argmax }, &[x]))
    }

    /// Mean cross-entropy of row-wise softmax against `labels`. Returns the
    /// scalar loss node and the `b × k` probabilities.
    pub fn softmax_cross_entropy(
        &mut self,
        logits: Var,
        labels: &[usize],
    ) -> Result<(Var, Tensor), TensorError> {
        self.check(logits)?;
        let (b, k) = self.node(logits).value.dims2()?;
        if labels.len() != b {
            return Err(TensorError::ShapeMismatch(format!(
                "{} labels for {b} rows",
                labels.len()
            )));
        }
        if let Some(&label) = labels.iter().find(|&&l| l >= k) {
            return Err(TensorError::InvalidLabel { label, classes: k });
        }
        let probs = softmax_rows(self.node(logits).value.data(), k);
        let mut loss = 0.0;
        for (row, &label) in probs.chunks_exact(k).zip(labels) {
            loss -= row[label].ln();
        }
        loss /= b as Real;
        let prob_tensor = Tensor::matrix(b, k, probs.clone())?;
        let var = self.push(
            Tensor::scalar(loss),
            Op::SoftmaxCrossEntropy {
                logits,
                labels: labels.to_vec(),
                probs,
            },
            &[logits],
        );
        Ok((var, prob_tensor))
    }

    pub fn sum(&mut self, x: Var) -> Result<Var, TensorError> {
        self.check(x)?;
        let total = self.node(x).value.data().iter().sum();
        Ok(self.push(Tensor::scalar(total), Op::Sum(x), &[x]))
    }

    /// Elementwise product of equally shaped tensors.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.check(a)?;
        self.check(b)?;
        let (ta, tb) = (&self.node(a).value, &self.node(b).value);
        if ta.shape() != tb.shape() {
            return Err(TensorError::ShapeMismatch(format!(
                "elementwise product of {:?} and {:?}",
                ta.shape(),
                tb.shape()
            )));
        }
        let out = ta.data().iter().zip(tb.data()).map(|(x, y)| x * y).collect();
        let value = Tensor::new(ta.shape().to_vec(), out)?;
        Ok(self.push(value, Op::Mul(a, b), &[a, b]))
    }

    /// Accumulates `d loss / d leaf` into every leaf that requires gradients.
    /// Leaf gradients add up across calls; intermediate ones are recomputed.
    pub fn backward(&mut self, loss: Var) -> Result<(), TensorError> {
        let root = self.check(loss)?;
        if self.nodes[root].value.len() != 1 {
            return Err(TensorError::ShapeMismatch(
                "backward needs a scalar loss".into(),
            ));
        }
        if !self.nodes[root].requires_grad {
            return Err(TensorError::DetachedGraph);
        }
        for node in &mut self.nodes {
            if !matches!(node.op, Op::Leaf) {
                node.grad = None;
            }
        }
        accumulate(&mut self.nodes[root], &[1.0]);
        for i in (0..=root).rev() {
            let node = &mut self.nodes[i];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(grad) = node.grad.take() else {
                continue;
            };
            let contributions = self.local_gradients(i, &grad);
            self.nodes[i].grad = Some(grad);
            for (target, g) in contributions {
                let node = &mut self.nodes[target.index];
                if node.requires_grad {
                    accumulate(node, &g);
                }
            }
        }
        Ok(())
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.index].requires_grad
    }

    fn local_gradients(&self, i: usize, grad: &[Real]) -> Vec<(Var, Vec<Real>)> {
        let node = &self.nodes[i];
        let mut out = Vec::new();
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let ta = &self.node(*a).value;
                let tb = &self.node(*b).value;
                let (n, k) = (ta.shape()[0], ta.shape()[1]);
                let m = tb.shape()[1];
                if self.wants(*a) {
                    let bt = transpose(tb.data(), k, m);
                    out.push((*a, matmul(grad, &bt, n, m, k)));
                }
                if self.wants(*b) {
                    let at = transpose(ta.data(), n, k);
                    out.push((*b, matmul(&at, grad, k, n, m)));
                }
            }
            Op::AddBias(x, bias) => {
                if self.wants(*x) {
                    out.push((*x, grad.to_vec()));
                }
                if self.wants(*bias) {
                    let m = self.node(*bias).value.len();
                    let mut db = vec![0.0; m];
                    for row in grad.chunks_exact(m) {
                        for (d, g) in db.iter_mut().zip(row) {
                            *d += g;
                        }
                    }
                    out.push((*bias, db));
                }
            }
            Op::Relu(x) => {
                let xv = self.node(*x).value.data();
                let dx = grad
                    .iter()
                    .zip(xv)
                    .map(|(g, v)| if *v > 0.0 { *g } else { 0.0 })
                    .collect();
                out.push((*x, dx));
            }
            Op::Dropout { x, mask } => {
                out.push((*x, grad.iter().zip(mask).map(|(g, m)| g * m).collect()));
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                normalized,
                inv_std,
                batch_stats,
            } => {
                let c = inv_std.len();
                let n = grad.len() / c;
                let g = self.node(*gamma).value.data();
                let mut sum_dy = vec![0.0; c];
                let mut sum_dy_xh = vec![0.0; c];
                for (drow, xrow) in grad.chunks_exact(c).zip(normalized.chunks_exact(c)) {
                    for j in 0..c {
                        sum_dy[j] += drow[j];
                        sum_dy_xh[j] += drow[j] * xrow[j];
                    }
                }
                if self.wants(*x) {
                    let mut dx = Vec::with_capacity(grad.len());
                    if *batch_stats {
                        let nf = n as Real;
                        let scale: Vec<Real> =
                            (0..c).map(|j| g[j] * inv_std[j] / nf).collect();
                        for (drow, xrow) in grad.chunks_exact(c).zip(normalized.chunks_exact(c)) {
                            for j in 0..c {
                                dx.push(
                                    scale[j] * (nf * drow[j] - sum_dy[j] - xrow[j] * sum_dy_xh[j]),
                                );
                            }
                        }
                    } else {
                        for drow in grad.chunks_exact(c) {
                            for j in 0..c {
                                dx.push(g[j] * inv_std[j] * drow[j]);
                            }
                        }
                    }
                    out.push((*x, dx));
                }
                if self.wants(*gamma) {
                    out.push((*gamma, sum_dy_xh));
                }
                if self.wants(*beta) {
                    out.push((*beta, sum_dy));
                }
            }
            Op::MaxOverPoints { x, argmax } => {
                let (n, c) = (self.node(*x).value.shape()[0], self.node(*x).value.shape()[1]);
                let mut dx = vec![0.0; n * c];
                for (idx, (&row, g)) in argmax.iter().zip(grad).enumerate() {
                    dx[row * c + idx % c] += g;
                }
                out.push((*x, dx));
            }
            Op::SoftmaxCrossEntropy {
                logits,
                labels,
                probs,
            } => {
                let b = labels.len();
                let k = probs.len() / b;
                let scale = grad[0] / b as Real;
                let mut d = probs.clone();
                for (row, &label) in d.chunks_exact_mut(k).zip(labels) {
                    row[label] -= 1.0;
                    row.iter_mut().for_each(|v| *v *= scale);
                }
                out.push((*logits, d));
            }
            Op::Sum(x) => {
                out.push((*x, vec![grad[0]; self.node(*x).value.len()]));
            }
            Op::Mul(a, b) => {
                let av = self.node(*a).value.data();
                let bv = self.node(*b).value.data();
                if self.wants(*a) {
                    out.push((*a, grad.iter().zip(bv).map(|(g, y)| g * y).collect()));
                }
                if self.wants(*b) {
                    out.push((*b, grad.iter().zip(av).map(|(g, x)| g * x).collect()));
                }
            }
        }
        out
    }
}

fn accumulate(node: &mut Node, g: &[Real]) {
    match &mut node.grad {
        Some(existing) => existing.iter_mut().zip(g).for_each(|(e, v)| *e += v),
        None => node.grad = Some(g.to_vec()),
    }
}

/// Row-wise softmax of a `b × k` matrix, stabilized by subtracting each
/// row's maximum.
pub fn softmax_rows(logits: &[Real], k: usize) -> Vec<Real> {
    let mut out = Vec::with_capacity(logits.len());
    for row in logits.chunks_exact(k) {
        let max = row.iter().copied().fold(Real::NEG_INFINITY, Real::max);
        let start = out.len();
        let mut total = 0.0;
        for &v in row {
            let e = (v - max).exp();
            total += e;
            out.push(e);
        }
        out[start..].iter_mut().for_each(|v| *v /= total);
    }
    out
}
