//! Tape-based reverse-mode automatic differentiation over [`Tensor`]s.
//!
//! A [`Tape`] records every operation of one forward pass as an op node.
//! Nodes are appended in execution order, so walking the op list backwards
//! is a reverse topological traversal: each node is handled exactly once,
//! after everything that consumes it. [`Tape::backward`] seeds the scalar
//! loss node with 1.0, propagates local gradient rules, and accumulates the
//! result into per-node gradient buffers (so a second backward call without
//! reset exactly doubles the gradients).
//!
//! One training step owns one tape exclusively. Forward values are immutable
//! once computed.

use std::collections::BTreeMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Handle to a node on a specific tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(pub(crate) usize);

/// Elementwise activation functions.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ActivationKind {
    ReLU,
    /// Negative slope 0.01.
    LeakyReLU,
    Gelu,
    Sigmoid,
    Tanh,
}

impl ActivationKind {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            ActivationKind::ReLU => x.max(0.0),
            ActivationKind::LeakyReLU => {
                if x > 0.0 {
                    x
                } else {
                    0.01 * x
                }
            }
            ActivationKind::Gelu => 0.5 * x * (1.0 + libm::erf(x / std::f64::consts::SQRT_2)),
            ActivationKind::Sigmoid => sigmoid(x),
            ActivationKind::Tanh => x.tanh(),
        }
    }

    /// Derivative at `x`; subgradient 0 at the ReLU kink.
    pub fn derivative(self, x: f64) -> f64 {
        match self {
            ActivationKind::ReLU => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            ActivationKind::LeakyReLU => {
                if x > 0.0 {
                    1.0
                } else {
                    0.01
                }
            }
            ActivationKind::Gelu => {
                let phi = (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
                let cdf = 0.5 * (1.0 + libm::erf(x / std::f64::consts::SQRT_2));
                cdf + x * phi
            }
            ActivationKind::Sigmoid => {
                let s = sigmoid(x);
                s * (1.0 - s)
            }
            ActivationKind::Tanh => {
                let t = x.tanh();
                1.0 - t * t
            }
        }
    }

    pub fn is_smooth(self) -> bool {
        !matches!(self, ActivationKind::ReLU | ActivationKind::LeakyReLU)
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Permutation-invariant row reductions for set encoders.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Reduction {
    Max,
    Min,
    Sum,
    Mean,
}

enum Op {
    Leaf,
    MatMul { a: NodeId, b: NodeId },
    Transpose { x: NodeId },
    Linear { x: NodeId, w: NodeId, b: NodeId },
    Activate { x: NodeId, kind: ActivationKind },
    SoftmaxRows { x: NodeId },
    /// Columnwise reduction of a rank-2 tensor to a row vector.
    /// For Max/Min, `routes` holds the winning row per column.
    ReduceRows { x: NodeId, kind: Reduction, routes: Vec<usize> },
    Concat { xs: Vec<NodeId>, axis: usize },
    Conv2d { x: NodeId, f: NodeId, b: NodeId },
    AvgPool2 { x: NodeId },
    /// `mask` is empty for the identity (inference / rate 0) case,
    /// otherwise holds 0.0 or the survivor scale per element.
    Dropout { x: NodeId, mask: Vec<f64> },
    Reshape { x: NodeId },
    Add { a: NodeId, b: NodeId },
    Sub { a: NodeId, b: NodeId },
    Mul { a: NodeId, b: NodeId },
    Scale { x: NodeId, c: f64 },
    Abs { x: NodeId },
    SumAll { x: NodeId },
    MeanAll { x: NodeId },
}

pub struct Tape {
    values: Vec<Tensor>,
    grads: Vec<Tensor>,
    ops: Vec<Op>,
    params: Vec<NodeId>,
    /// Smallest observed distance to a non-differentiable point
    /// (ReLU kink, max/min tie, abs at zero) during forward passes.
    kink_margin: f64,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self {
            values: Vec::new(),
            grads: Vec::new(),
            ops: Vec::new(),
            params: Vec::new(),
            kink_margin: f64::INFINITY,
        }
    }

    fn push(&mut self, value: Tensor, op: Op) -> NodeId {
        let id = NodeId(self.values.len());
        self.values.push(value);
        self.ops.push(op);
        id
    }

    /// Inserts a constant input node.
    pub fn leaf(&mut self, value: Tensor) -> NodeId {
        self.push(value, Op::Leaf)
    }

    /// Inserts a learnable-parameter node; its gradient is reported by
    /// [`Tape::backward`], zero if the loss never reaches it.
    pub fn param(&mut self, value: Tensor) -> NodeId {
        let id = self.push(value, Op::Leaf);
        self.params.push(id);
        id
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.values[id.0]
    }

    /// Accumulated gradient of a node; zeros before the first backward call.
    pub fn grad(&self, id: NodeId) -> Tensor {
        self.grads
            .get(id.0)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros_like(&self.values[id.0]))
    }

    /// Registered parameter nodes, in registration order.
    pub fn param_ids(&self) -> &[NodeId] {
        &self.params
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Distance to the nearest non-differentiable point seen so far;
    /// infinite if every recorded op was smooth.
    pub fn kink_margin(&self) -> f64 {
        self.kink_margin
    }

    fn note_kink(&mut self, margin: f64) {
        if margin < self.kink_margin {
            self.kink_margin = margin;
        }
    }

    // ── forward ops ─────────────────────────────────────────────────────

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let out = self.values[a.0].matmul(&self.values[b.0])?;
        Ok(self.push(out, Op::MatMul { a, b }))
    }

    pub fn transpose(&mut self, x: NodeId) -> Result<NodeId> {
        let out = self.values[x.0].transpose2()?;
        Ok(self.push(out, Op::Transpose { x }))
    }

    /// `x·W + b`, the bias broadcast over rows.
    pub fn linear(&mut self, x: NodeId, w: NodeId, b: NodeId) -> Result<NodeId> {
        let bias = &self.values[b.0];
        let w_t = &self.values[w.0];
        if bias.shape().len() != 1 || bias.shape()[0] != w_t.shape()[1] {
            return Err(Error::dim(format!(
                "linear bias shape {:?} does not match weight {:?}",
                bias.shape(),
                w_t.shape()
            )));
        }
        let mut out = self.values[x.0].matmul(w_t)?;
        let cols = out.cols();
        let bias = bias.data().to_vec();
        for (i, v) in out.data_mut().iter_mut().enumerate() {
            *v += bias[i % cols];
        }
        Ok(self.push(out, Op::Linear { x, w, b }))
    }

    pub fn activate(&mut self, x: NodeId, kind: ActivationKind) -> NodeId {
        let xv = &self.values[x.0];
        let out = xv.map(|v| kind.apply(v));
        if !kind.is_smooth() {
            let m = xv.data().iter().fold(f64::INFINITY, |m, &v| m.min(v.abs()));
            self.note_kink(m);
        }
        self.push(out, Op::Activate { x, kind })
    }

    /// Row-stabilized softmax over the last axis of a rank-2 tensor.
    pub fn softmax_rows(&mut self, x: NodeId) -> Result<NodeId> {
        let xv = &self.values[x.0];
        if xv.shape().len() != 2 {
            return Err(Error::dim(format!(
                "softmax_rows expects rank 2, got {:?}",
                xv.shape()
            )));
        }
        let (n, m) = (xv.rows(), xv.cols());
        let mut out = vec![0.0; n * m];
        for i in 0..n {
            let row = &xv.data()[i * m..(i + 1) * m];
            let mx = row.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
            let mut sum = 0.0;
            for j in 0..m {
                let e = (row[j] - mx).exp();
                out[i * m + j] = e;
                sum += e;
            }
            for j in 0..m {
                out[i * m + j] /= sum;
            }
        }
        let out = Tensor::from_vec(&[n, m], out)?;
        Ok(self.push(out, Op::SoftmaxRows { x }))
    }

    /// Columnwise reduction of an `s×d` tensor to a `d`-vector.
    ///
    /// Max/Min route their gradient to the first winning row per column.
    /// Sum/Mean add the column values in ascending value order so the result
    /// is bit-identical under any row permutation.
    pub fn reduce_rows(&mut self, x: NodeId, kind: Reduction) -> Result<NodeId> {
        let xv = &self.values[x.0];
        if xv.shape().len() != 2 {
            return Err(Error::dim(format!(
                "reduce_rows expects rank 2, got {:?}",
                xv.shape()
            )));
        }
        let (s, d) = (xv.rows(), xv.cols());
        if s == 0 {
            return Err(Error::Precondition("reduce_rows over empty set".into()));
        }
        let mut out = vec![0.0; d];
        let mut routes = Vec::new();
        let mut min_gap = f64::INFINITY;
        match kind {
            Reduction::Max | Reduction::Min => {
                routes = vec![0usize; d];
                for j in 0..d {
                    let mut best = xv.at2(0, j);
                    let mut best_i = 0;
                    let mut second = f64::NEG_INFINITY;
                    for i in 1..s {
                        let v = xv.at2(i, j);
                        let better = match kind {
                            Reduction::Max => v > best,
                            _ => v < best,
                        };
                        if better {
                            second = best;
                            best = v;
                            best_i = i;
                        } else if match kind {
                            Reduction::Max => v > second || second == f64::NEG_INFINITY,
                            _ => v < second || second == f64::NEG_INFINITY,
                        } {
                            second = v;
                        }
                    }
                    // bit-equal ties are stable plateaus (typically two
                    // ReLU-clamped zeros), not crossable kinks; only a
                    // small nonzero gap can flip under perturbation
                    let gap = (best - second).abs();
                    if s > 1 && gap > 0.0 {
                        min_gap = min_gap.min(gap);
                    }
                    out[j] = best;
                    routes[j] = best_i;
                }
            }
            Reduction::Sum | Reduction::Mean => {
                let mut col = vec![0.0; s];
                for j in 0..d {
                    for i in 0..s {
                        col[i] = xv.at2(i, j);
                    }
                    col.sort_by(f64::total_cmp);
                    let sum: f64 = col.iter().sum();
                    out[j] = if kind == Reduction::Mean {
                        sum / s as f64
                    } else {
                        sum
                    };
                }
            }
        }
        if matches!(kind, Reduction::Max | Reduction::Min) {
            self.note_kink(min_gap);
        }
        let out = Tensor::from_vec(&[d], out)?;
        Ok(self.push(out, Op::ReduceRows { x, kind, routes }))
    }

    /// Order-preserving concatenation along `axis`; every other axis must agree.
    pub fn concat(&mut self, xs: &[NodeId], axis: usize) -> Result<NodeId> {
        if xs.is_empty() {
            return Err(Error::Precondition("concat of zero tensors".into()));
        }
        let first = self.values[xs[0].0].shape().to_vec();
        if axis >= first.len() {
            return Err(Error::dim(format!(
                "concat axis {axis} out of range for rank {}",
                first.len()
            )));
        }
        let mut cat_extent = 0;
        for &id in xs {
            let s = self.values[id.0].shape();
            if s.len() != first.len()
                || s.iter()
                    .enumerate()
                    .any(|(k, &e)| k != axis && e != first[k])
            {
                return Err(Error::dim(format!(
                    "concat shapes {:?} and {:?} differ off axis {axis}",
                    first, s
                )));
            }
            cat_extent += s[axis];
        }
        let mut shape = first.clone();
        shape[axis] = cat_extent;

        // Row-major copy: `outer` blocks, each a run of `inner * extent` values.
        let outer: usize = first[..axis].iter().product();
        let inner: usize = first[axis + 1..].iter().product();
        let numel: usize = shape.iter().product();
        let mut data = vec![0.0; numel];
        let mut offset = 0;
        for &id in xs {
            let v = &self.values[id.0];
            let extent = v.shape()[axis];
            let run = extent * inner;
            for o in 0..outer {
                let src = &v.data()[o * run..(o + 1) * run];
                let dst_start = o * cat_extent * inner + offset * inner;
                data[dst_start..dst_start + run].copy_from_slice(src);
            }
            offset += extent;
        }
        let out = Tensor::from_vec(&shape, data)?;
        Ok(self.push(
            out,
            Op::Concat {
                xs: xs.to_vec(),
                axis,
            },
        ))
    }

    /// Valid cross-correlation, stride 1: `x` is `c_in×h×w`, `f` is
    /// `c_out×c_in×kh×kw`, bias one value per output channel.
    pub fn conv2d(&mut self, x: NodeId, f: NodeId, b: NodeId) -> Result<NodeId> {
        let (xv, fv, bv) = (&self.values[x.0], &self.values[f.0], &self.values[b.0]);
        if xv.shape().len() != 3 || fv.shape().len() != 4 {
            return Err(Error::dim(format!(
                "conv2d expects input rank 3 and filters rank 4, got {:?} and {:?}",
                xv.shape(),
                fv.shape()
            )));
        }
        let (c_in, h, w) = (xv.shape()[0], xv.shape()[1], xv.shape()[2]);
        let (c_out, fc_in, kh, kw) = (
            fv.shape()[0],
            fv.shape()[1],
            fv.shape()[2],
            fv.shape()[3],
        );
        if fc_in != c_in {
            return Err(Error::dim(format!(
                "conv2d channel mismatch: input {c_in}, filters expect {fc_in}"
            )));
        }
        if bv.numel() != c_out {
            return Err(Error::dim(format!(
                "conv2d bias has {} entries for {c_out} output channels",
                bv.numel()
            )));
        }
        if h < kh || w < kw {
            return Err(Error::dim(format!(
                "conv2d input {h}x{w} smaller than kernel {kh}x{kw}"
            )));
        }
        let (oh, ow) = (h - kh + 1, w - kw + 1);
        let mut out = vec![0.0; c_out * oh * ow];
        for co in 0..c_out {
            let bias = bv.data()[co];
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = bias;
                    for ci in 0..c_in {
                        for u in 0..kh {
                            let xrow = &xv.data()
                                [ci * h * w + (oy + u) * w + ox..ci * h * w + (oy + u) * w + ox + kw];
                            let frow = &fv.data()
                                [co * c_in * kh * kw + ci * kh * kw + u * kw..][..kw];
                            for v in 0..kw {
                                acc += xrow[v] * frow[v];
                            }
                        }
                    }
                    out[co * oh * ow + oy * ow + ox] = acc;
                }
            }
        }
        let out = Tensor::from_vec(&[c_out, oh, ow], out)?;
        Ok(self.push(out, Op::Conv2d { x, f, b }))
    }

    /// 2×2 average pooling, stride 2; a trailing odd row/column is dropped.
    pub fn avg_pool2(&mut self, x: NodeId) -> Result<NodeId> {
        let xv = &self.values[x.0];
        if xv.shape().len() != 3 {
            return Err(Error::dim(format!(
                "avg_pool2 expects rank 3, got {:?}",
                xv.shape()
            )));
        }
        let (c, h, w) = (xv.shape()[0], xv.shape()[1], xv.shape()[2]);
        if h < 2 || w < 2 {
            return Err(Error::dim(format!("avg_pool2 input {h}x{w} smaller than 2x2")));
        }
        let (oh, ow) = (h / 2, w / 2);
        let mut out = vec![0.0; c * oh * ow];
        for ci in 0..c {
            for oy in 0..oh {
                for ox in 0..ow {
                    let base = ci * h * w + 2 * oy * w + 2 * ox;
                    let s = xv.data()[base]
                        + xv.data()[base + 1]
                        + xv.data()[base + w]
                        + xv.data()[base + w + 1];
                    out[ci * oh * ow + oy * ow + ox] = s * 0.25;
                }
            }
        }
        let out = Tensor::from_vec(&[c, oh, ow], out)?;
        Ok(self.push(out, Op::AvgPool2 { x }))
    }

    /// Inverted dropout: in training, zeroes each element with probability
    /// `rate` and scales survivors by `1/(1-rate)`; identity in inference.
    pub fn dropout(
        &mut self,
        x: NodeId,
        rate: f64,
        training: bool,
        rng: &mut ChaCha8Rng,
    ) -> Result<NodeId> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::Parameter(format!(
                "dropout rate must be in [0, 1), got {rate}"
            )));
        }
        let xv = &self.values[x.0];
        if !training || rate == 0.0 {
            let out = xv.clone();
            return Ok(self.push(out, Op::Dropout { x, mask: Vec::new() }));
        }
        let scale = 1.0 / (1.0 - rate);
        let mask: Vec<f64> = (0..xv.numel())
            .map(|_| if rng.gen::<f64>() < rate { 0.0 } else { scale })
            .collect();
        let data: Vec<f64> = xv
            .data()
            .iter()
            .zip(&mask)
            .map(|(&v, &m)| v * m)
            .collect();
        let out = Tensor::from_vec(xv.shape(), data)?;
        Ok(self.push(out, Op::Dropout { x, mask }))
    }

    pub fn reshape(&mut self, x: NodeId, shape: &[usize]) -> Result<NodeId> {
        let xv = &self.values[x.0];
        let numel: usize = shape.iter().product();
        if numel != xv.numel() {
            return Err(Error::dim(format!(
                "reshape {:?} -> {:?} changes element count",
                xv.shape(),
                shape
            )));
        }
        let out = Tensor::from_vec(shape, xv.data().to_vec())?;
        Ok(self.push(out, Op::Reshape { x }))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let out = self.values[a.0].zip(&self.values[b.0], |x, y| x + y)?;
        Ok(self.push(out, Op::Add { a, b }))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let out = self.values[a.0].zip(&self.values[b.0], |x, y| x - y)?;
        Ok(self.push(out, Op::Sub { a, b }))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let out = self.values[a.0].zip(&self.values[b.0], |x, y| x * y)?;
        Ok(self.push(out, Op::Mul { a, b }))
    }

    pub fn scale(&mut self, x: NodeId, c: f64) -> NodeId {
        let out = self.values[x.0].map(|v| v * c);
        self.push(out, Op::Scale { x, c })
    }

    pub fn abs(&mut self, x: NodeId) -> NodeId {
        let xv = &self.values[x.0];
        let m = xv.data().iter().fold(f64::INFINITY, |m, &v| m.min(v.abs()));
        let out = xv.map(f64::abs);
        self.note_kink(m);
        self.push(out, Op::Abs { x })
    }

    pub fn sum_all(&mut self, x: NodeId) -> NodeId {
        let s: f64 = self.values[x.0].data().iter().sum();
        self.push(Tensor::scalar(s), Op::SumAll { x })
    }

    pub fn mean_all(&mut self, x: NodeId) -> NodeId {
        let v = &self.values[x.0];
        let s: f64 = v.data().iter().sum();
        let n = v.numel() as f64;
        self.push(Tensor::scalar(s / n), Op::MeanAll { x })
    }

    // ── backward ────────────────────────────────────────────────────────

    /// Back-propagates from a scalar loss node and returns the accumulated
    /// gradient of every registered parameter (zero when unreachable).
    pub fn backward(&mut self, loss: NodeId) -> Result<BTreeMap<NodeId, Tensor>> {
        if !self.values[loss.0].is_scalar() {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.values[loss.0].shape()
            )));
        }
        if self.grads.is_empty() {
            self.grads = self.values.iter().map(Tensor::zeros_like).collect();
        }

        let mut adj: Vec<Option<Tensor>> = vec![None; self.values.len()];
        adj[loss.0] = Some(Tensor::scalar(1.0));

        for i in (0..self.ops.len()).rev() {
            let Some(g) = adj[i].take() else { continue };
            self.propagate(i, &g, &mut adj)?;
            self.grads[i].add_assign(&g);
        }

        Ok(self
            .params
            .iter()
            .map(|&p| (p, self.grads[p.0].clone()))
            .collect())
    }

    fn propagate(&self, i: usize, g: &Tensor, adj: &mut [Option<Tensor>]) -> Result<()> {
        fn accum(adj: &mut [Option<Tensor>], id: NodeId, c: Tensor) {
            match &mut adj[id.0] {
                Some(t) => t.add_assign(&c),
                slot @ None => *slot = Some(c),
            }
        }

        match &self.ops[i] {
            Op::Leaf => {}
            Op::MatMul { a, b } => {
                let (av, bv) = (&self.values[a.0], &self.values[b.0]);
                accum(adj, *a, g.matmul(&bv.transpose2()?)?);
                accum(adj, *b, av.transpose2()?.matmul(g)?);
            }
            Op::Transpose { x } => {
                accum(adj, *x, g.transpose2()?);
            }
            Op::Linear { x, w, b } => {
                let (xv, wv) = (&self.values[x.0], &self.values[w.0]);
                accum(adj, *x, g.matmul(&wv.transpose2()?)?);
                accum(adj, *w, xv.transpose2()?.matmul(g)?);
                let cols = g.cols();
                let mut db = vec![0.0; cols];
                for (k, &v) in g.data().iter().enumerate() {
                    db[k % cols] += v;
                }
                accum(adj, *b, Tensor::from_vec(&[cols], db)?);
            }
            Op::Activate { x, kind } => {
                let xv = &self.values[x.0];
                let dx = xv.zip(g, |v, gv| kind.derivative(v) * gv)?;
                accum(adj, *x, dx);
            }
            Op::SoftmaxRows { x } => {
                let y = &self.values[i];
                let (n, m) = (y.rows(), y.cols());
                let mut dx = vec![0.0; n * m];
                for r in 0..n {
                    let yr = &y.data()[r * m..(r + 1) * m];
                    let gr = &g.data()[r * m..(r + 1) * m];
                    let dot: f64 = yr.iter().zip(gr).map(|(&a, &b)| a * b).sum();
                    for c in 0..m {
                        dx[r * m + c] = yr[c] * (gr[c] - dot);
                    }
                }
                accum(adj, *x, Tensor::from_vec(&[n, m], dx)?);
            }
            Op::ReduceRows { x, kind, routes } => {
                let xv = &self.values[x.0];
                let (s, d) = (xv.rows(), xv.cols());
                let mut dx = vec![0.0; s * d];
                match kind {
                    Reduction::Max | Reduction::Min => {
                        for j in 0..d {
                            dx[routes[j] * d + j] = g.data()[j];
                        }
                    }
                    Reduction::Sum => {
                        for r in 0..s {
                            for j in 0..d {
                                dx[r * d + j] = g.data()[j];
                            }
                        }
                    }
                    Reduction::Mean => {
                        let inv = 1.0 / s as f64;
                        for r in 0..s {
                            for j in 0..d {
                                dx[r * d + j] = g.data()[j] * inv;
                            }
                        }
                    }
                }
                accum(adj, *x, Tensor::from_vec(&[s, d], dx)?);
            }
            Op::Concat { xs, axis } => {
                let shape = self.values[i].shape();
                let outer: usize = shape[..*axis].iter().product();
                let inner: usize = shape[*axis + 1..].iter().product();
                let cat_extent = shape[*axis];
                let mut offset = 0;
                for &id in xs {
                    let xshape = self.values[id.0].shape().to_vec();
                    let extent = xshape[*axis];
                    let run = extent * inner;
                    let mut dx = vec![0.0; self.values[id.0].numel()];
                    for o in 0..outer {
                        let src_start = o * cat_extent * inner + offset * inner;
                        dx[o * run..(o + 1) * run]
                            .copy_from_slice(&g.data()[src_start..src_start + run]);
                    }
                    accum(adj, id, Tensor::from_vec(&xshape, dx)?);
                    offset += extent;
                }
            }
            Op::Conv2d { x, f, b } => {
                let (xv, fv) = (&self.values[x.0], &self.values[f.0]);
                let (c_in, h, w) = (xv.shape()[0], xv.shape()[1], xv.shape()[2]);
                let (c_out, kh, kw) = (fv.shape()[0], fv.shape()[2], fv.shape()[3]);
                let (oh, ow) = (h - kh + 1, w - kw + 1);
                let mut dx = vec![0.0; xv.numel()];
                let mut df = vec![0.0; fv.numel()];
                let mut db = vec![0.0; c_out];
                for co in 0..c_out {
                    for oy in 0..oh {
                        for ox in 0..ow {
                            let gv = g.data()[co * oh * ow + oy * ow + ox];
                            if gv == 0.0 {
                                continue;
                            }
                            db[co] += gv;
                            for ci in 0..c_in {
                                for u in 0..kh {
                                    for v in 0..kw {
                                        let xi = ci * h * w + (oy + u) * w + (ox + v);
                                        let fi =
                                            co * c_in * kh * kw + ci * kh * kw + u * kw + v;
                                        dx[xi] += gv * fv.data()[fi];
                                        df[fi] += gv * xv.data()[xi];
                                    }
                                }
                            }
                        }
                    }
                }
                accum(adj, *x, Tensor::from_vec(xv.shape(), dx)?);
                accum(adj, *f, Tensor::from_vec(fv.shape(), df)?);
                accum(adj, *b, Tensor::from_vec(&[c_out], db)?);
            }
            Op::AvgPool2 { x } => {
                let xv = &self.values[x.0];
                let (c, h, w) = (xv.shape()[0], xv.shape()[1], xv.shape()[2]);
                let (oh, ow) = (h / 2, w / 2);
                let mut dx = vec![0.0; xv.numel()];
                for ci in 0..c {
                    for oy in 0..oh {
                        for ox in 0..ow {
                            let gv = g.data()[ci * oh * ow + oy * ow + ox] * 0.25;
                            let base = ci * h * w + 2 * oy * w + 2 * ox;
                            dx[base] += gv;
                            dx[base + 1] += gv;
                            dx[base + w] += gv;
                            dx[base + w + 1] += gv;
                        }
                    }
                }
                accum(adj, *x, Tensor::from_vec(xv.shape(), dx)?);
            }
            Op::Dropout { x, mask } => {
                let dx = if mask.is_empty() {
                    g.clone()
                } else {
                    let data: Vec<f64> = g
                        .data()
                        .iter()
                        .zip(mask)
                        .map(|(&gv, &m)| gv * m)
                        .collect();
                    Tensor::from_vec(g.shape(), data)?
                };
                accum(adj, *x, dx);
            }
            Op::Reshape { x } => {
                let xshape = self.values[x.0].shape().to_vec();
                accum(adj, *x, Tensor::from_vec(&xshape, g.data().to_vec())?);
            }
            Op::Add { a, b } => {
                accum(adj, *a, g.clone());
                accum(adj, *b, g.clone());
            }
            Op::Sub { a, b } => {
                accum(adj, *a, g.clone());
                accum(adj, *b, g.map(|v| -v));
            }
            Op::Mul { a, b } => {
                accum(adj, *a, g.zip(&self.values[b.0], |gv, bv| gv * bv)?);
                accum(adj, *b, g.zip(&self.values[a.0], |gv, av| gv * av)?);
            }
            Op::Scale { x, c } => {
                accum(adj, *x, g.map(|v| v * c));
            }
            Op::Abs { x } => {
                let xv = &self.values[x.0];
                let dx = xv.zip(g, |v, gv| {
                    if v > 0.0 {
                        gv
                    } else if v < 0.0 {
                        -gv
                    } else {
                        0.0
                    }
                })?;
                accum(adj, *x, dx);
            }
            Op::SumAll { x } => {
                let xv = &self.values[x.0];
                accum(adj, *x, Tensor::filled(xv.shape(), g.item()));
            }
            Op::MeanAll { x } => {
                let xv = &self.values[x.0];
                accum(adj, *x, Tensor::filled(xv.shape(), g.item() / xv.numel() as f64));
            }
        }
        Ok(())
    }
}
