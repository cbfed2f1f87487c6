//! Tape-based reverse-mode differentiation over [`Tensor`] values.
//!
//! Every operation appends one node whose inputs are earlier nodes, so the
//! node vector is already a topological order and the graph cannot contain
//! a cycle. [`Tape::backward`] walks it once in reverse.

use std::cell::{Ref, RefCell};

use super::tensor::{gemm, matrix_dims, same_shape, Layout, Tensor};
use crate::error::{Error, Result};

/// Added to the mean square inside [`Var::rms_norm`].
pub const RMS_NORM_EPS: f64 = 1e-6;

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(usize, usize),
    Add(usize, usize),
    AddRow(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    Sum(usize),
    Relu(usize),
    RmsNorm {
        x: usize,
        scale: usize,
        inv_rms: Vec<f64>,
    },
    SoftmaxRows(usize),
    CrossEntropy {
        logits: usize,
        labels: Vec<usize>,
        probs: Vec<f64>,
    },
    GatherRows {
        src: usize,
        index: Vec<usize>,
    },
    Attention {
        q: usize,
        k: usize,
        v: usize,
        heads: usize,
        seq_len: usize,
        weights: Vec<f64>,
    },
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

#[derive(Default)]
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
        write!(f, "Var#{}", self.id)
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    /// Leaf that receives a gradient.
    pub fn param(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Leaf, true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Leaf, false)
    }

    /// Copies the value of `v` into a fresh constant leaf, cutting the
    /// gradient path through it.
    pub fn detach<'t>(&'t self, v: Var<'t>) -> Var<'t> {
        let value = v.value().clone();
        self.constant(value)
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Tensor, op: Op, requires_grad: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    fn value_of(&self, id: usize) -> Ref<'_, Tensor> {
        Ref::map(self.nodes.borrow(), |n| &n[id].value)
    }

    fn rg(&self, id: usize) -> bool {
        self.nodes.borrow()[id].requires_grad
    }

    /// Sign patterns (`input > 0`) of every ReLU recorded so far, in tape order.
    pub fn relu_patterns(&self) -> Vec<Vec<bool>> {
        let nodes = self.nodes.borrow();
        nodes
            .iter()
            .filter_map(|n| match n.op {
                Op::Relu(x) => Some(nodes[x].value.data().iter().map(|&z| z > 0.0).collect()),
                _ => None,
            })
            .collect()
    }

    /// Attention weights saved by an attention node, laid out `[batch, head, key]`.
    pub fn attention_weights(&self, v: Var<'_>) -> Option<Vec<f64>> {
        match &self.nodes.borrow()[v.id].op {
            Op::Attention { weights, .. } => Some(weights.clone()),
            _ => None,
        }
    }

    /// Reverse-mode sweep from a scalar node.
    pub fn backward(&self, loss: Var<'_>) -> Result<Gradients> {
        let nodes = self.nodes.borrow();
        if nodes[loss.id].value.len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                nodes[loss.id].value.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; nodes.len()];
        grads[loss.id] = Some(Tensor::scalar(1.0));

        for id in (0..=loss.id).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &nodes[id];
            if !node.requires_grad {
                continue;
            }
            match &node.op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    let av = &nodes[*a].value;
                    let bv = &nodes[*b].value;
                    let (n, k) = (av.shape()[0], av.shape()[1]);
                    let m = bv.shape()[1];
                    if nodes[*a].requires_grad {
                        let mut da = vec![0.0; n * k];
                        gemm(n, m, k, g.data(), Layout::Normal, bv.data(), Layout::Transposed, &mut da, 0.0);
                        accumulate(&mut grads, *a, av.shape(), da);
                    }
                    if nodes[*b].requires_grad {
                        let mut db = vec![0.0; k * m];
                        gemm(k, n, m, av.data(), Layout::Transposed, g.data(), Layout::Normal, &mut db, 0.0);
                        accumulate(&mut grads, *b, bv.shape(), db);
                    }
                }
                Op::Add(a, b) => {
                    for &x in [a, b] {
                        if nodes[x].requires_grad {
                            accumulate(&mut grads, x, g.shape(), g.data().to_vec());
                        }
                    }
                }
                Op::AddRow(x, bias) => {
                    if nodes[*x].requires_grad {
                        accumulate(&mut grads, *x, g.shape(), g.data().to_vec());
                    }
                    if nodes[*bias].requires_grad {
                        let d = g.cols();
                        let mut db = vec![0.0; d];
                        for row in g.data().chunks(d) {
                            for (acc, v) in db.iter_mut().zip(row) {
                                *acc += v;
                            }
                        }
                        accumulate(&mut grads, *bias, nodes[*bias].value.shape(), db);
                    }
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (&nodes[*a].value, &nodes[*b].value);
                    if nodes[*a].requires_grad {
                        let da = g.data().iter().zip(bv.data()).map(|(g, b)| g * b).collect();
                        accumulate(&mut grads, *a, av.shape(), da);
                    }
                    if nodes[*b].requires_grad {
                        let db = g.data().iter().zip(av.data()).map(|(g, a)| g * a).collect();
                        accumulate(&mut grads, *b, bv.shape(), db);
                    }
                }
                Op::Scale(a, f) => {
                    if nodes[*a].requires_grad {
                        let da = g.data().iter().map(|v| v * f).collect();
                        accumulate(&mut grads, *a, g.shape(), da);
                    }
                }
                Op::Sum(a) => {
                    if nodes[*a].requires_grad {
                        let av = &nodes[*a].value;
                        accumulate(&mut grads, *a, av.shape(), vec![g.data()[0]; av.len()]);
                    }
                }
                Op::Relu(a) => {
                    if nodes[*a].requires_grad {
                        let av = &nodes[*a].value;
                        let da = g
                            .data()
                            .iter()
                            .zip(av.data())
                            .map(|(g, &z)| if z > 0.0 { *g } else { 0.0 })
                            .collect();
                        accumulate(&mut grads, *a, av.shape(), da);
                    }
                }
                Op::RmsNorm { x, scale, inv_rms } => {
                    let xv = &nodes[*x].value;
                    let sv = &nodes[*scale].value;
                    let d = xv.cols();
                    let mut dx = vec![0.0; xv.len()];
                    let mut ds = vec![0.0; d];
                    for (i, &r) in inv_rms.iter().enumerate() {
                        let xr = &xv.data()[i * d..(i + 1) * d];
                        let gr = &g.data()[i * d..(i + 1) * d];
                        // dxh = g * s; dx = r * (dxh - xh * <dxh, xh> / d)
                        let mut dot = 0.0;
                        for j in 0..d {
                            let xh = xr[j] * r;
                            ds[j] += gr[j] * xh;
                            dot += gr[j] * sv.data()[j] * xh;
                        }
                        let dxr = &mut dx[i * d..(i + 1) * d];
                        for j in 0..d {
                            let xh = xr[j] * r;
                            dxr[j] = r * (gr[j] * sv.data()[j] - xh * dot / d as f64);
                        }
                    }
                    if nodes[*x].requires_grad {
                        accumulate(&mut grads, *x, xv.shape(), dx);
                    }
                    if nodes[*scale].requires_grad {
                        accumulate(&mut grads, *scale, sv.shape(), ds);
                    }
                }
                Op::SoftmaxRows(a) => {
                    if nodes[*a].requires_grad {
                        let p = &node.value;
                        let m = p.cols();
                        let mut da = vec![0.0; p.len()];
                        for ((pr, gr), dr) in p
                            .data()
                            .chunks(m)
                            .zip(g.data().chunks(m))
                            .zip(da.chunks_mut(m))
                        {
                            let dot: f64 = pr.iter().zip(gr).map(|(p, g)| p * g).sum();
                            for j in 0..m {
                                dr[j] = pr[j] * (gr[j] - dot);
                            }
                        }
                        accumulate(&mut grads, *a, p.shape(), da);
                    }
                }
                Op::CrossEntropy {
                    logits,
                    labels,
                    probs,
                } => {
                    if nodes[*logits].requires_grad {
                        let lv = &nodes[*logits].value;
                        let c = lv.cols();
                        let n = labels.len() as f64;
                        let scale = g.data()[0] / n;
                        let mut dl: Vec<f64> = probs.iter().map(|p| p * scale).collect();
                        for (i, &y) in labels.iter().enumerate() {
                            dl[i * c + y] -= scale;
                        }
                        accumulate(&mut grads, *logits, lv.shape(), dl);
                    }
                }
                Op::GatherRows { src, index } => {
                    if nodes[*src].requires_grad {
                        let sv = &nodes[*src].value;
                        let d = sv.cols();
                        let mut ds = vec![0.0; sv.len()];
                        for (r, &i) in index.iter().enumerate() {
                            let gr = &g.data()[r * d..(r + 1) * d];
                            for (acc, v) in ds[i * d..(i + 1) * d].iter_mut().zip(gr) {
                                *acc += v;
                            }
                        }
                        accumulate(&mut grads, *src, sv.shape(), ds);
                    }
                }
                Op::Attention {
                    q,
                    k,
                    v,
                    heads,
                    seq_len,
                    weights,
                } => {
                    let (qv, kv, vv) = (&nodes[*q].value, &nodes[*k].value, &nodes[*v].value);
                    let (batch, width) = (qv.rows(), qv.cols());
                    let (heads, seq_len) = (*heads, *seq_len);
                    let dh = width / heads;
                    let inv_sqrt = 1.0 / (dh as f64).sqrt();
                    let mut dq = vec![0.0; qv.len()];
                    let mut dk = vec![0.0; kv.len()];
                    let mut dv = vec![0.0; vv.len()];
                    let mut dw = vec![0.0; seq_len];
                    for b in 0..batch {
                        for h in 0..heads {
                            let off = h * dh;
                            let gq = &g.data()[b * width + off..b * width + off + dh];
                            let w = &weights[(b * heads + h) * seq_len..(b * heads + h + 1) * seq_len];
                            for l in 0..seq_len {
                                let row = (b * seq_len + l) * width + off;
                                let vrow = &vv.data()[row..row + dh];
                                dw[l] = gq.iter().zip(vrow).map(|(a, b)| a * b).sum();
                                for (acc, gv) in dv[row..row + dh].iter_mut().zip(gq) {
                                    *acc += w[l] * gv;
                                }
                            }
                            let dot: f64 = w.iter().zip(&dw).map(|(a, b)| a * b).sum();
                            let qrow = &qv.data()[b * width + off..b * width + off + dh];
                            for l in 0..seq_len {
                                let ds = w[l] * (dw[l] - dot) * inv_sqrt;
                                let row = (b * seq_len + l) * width + off;
                                let krow = &kv.data()[row..row + dh];
                                for j in 0..dh {
                                    dq[b * width + off + j] += ds * krow[j];
                                    dk[row + j] += ds * qrow[j];
                                }
                            }
                        }
                    }
                    if nodes[*q].requires_grad {
                        accumulate(&mut grads, *q, qv.shape(), dq);
                    }
                    if nodes[*k].requires_grad {
                        accumulate(&mut grads, *k, kv.shape(), dk);
                    }
                    if nodes[*v].requires_grad {
                        accumulate(&mut grads, *v, vv.shape(), dv);
                    }
                }
            }
            // leaves keep their gradient for the caller
            if matches!(node.op, Op::Leaf) {
                grads[id] = Some(g);
            }
        }
        Ok(Gradients { grads })
    }
}

fn accumulate(grads: &mut [Option<Tensor>], id: usize, shape: &[usize], delta: Vec<f64>) {
    match &mut grads[id] {
        Some(existing) => {
            for (acc, d) in existing.data_mut().iter_mut().zip(delta) {
                *acc += d;
            }
        }
        slot @ None => {
            *slot = Some(Tensor::new(shape, delta).expect("gradient shape matches value"));
        }
    }
}

/// Gradients of one backward sweep, indexed by node.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient for a leaf; `None` when no path reached it.
    pub fn get(&self, v: Var<'_>) -> Option<&Tensor> {
        self.grads.get(v.id).and_then(Option::as_ref)
    }

    /// Gradient for a leaf, zero-filled when unreached.
    pub fn get_or_zeros(&self, v: Var<'_>) -> Tensor {
        self.get(v)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(v.value().shape()))
    }
}

impl<'t> Var<'t> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn value(&self) -> Ref<'t, Tensor> {
        self.tape.value_of(self.id)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.value().shape().to_vec()
    }

    fn unary(&self, value: Tensor, op: Op) -> Var<'t> {
        let rg = self.tape.rg(self.id);
        self.tape.push(value, op, rg)
    }

    fn binary(&self, other: Var<'t>, value: Tensor, op: Op) -> Var<'t> {
        let rg = self.tape.rg(self.id) || self.tape.rg(other.id);
        self.tape.push(value, op, rg)
    }

    pub fn matmul(&self, other: Var<'t>) -> Result<Var<'t>> {
        let value = self.value().matmul(&other.value())?;
        Ok(self.binary(other, value, Op::MatMul(self.id, other.id)))
    }

    pub fn add(&self, other: Var<'t>) -> Result<Var<'t>> {
        let value = self.value().add(&other.value())?;
        Ok(self.binary(other, value, Op::Add(self.id, other.id)))
    }

    /// Adds a length-`d` vector to every row of an `n x d` matrix.
    pub fn add_row(&self, bias: Var<'t>) -> Result<Var<'t>> {
        let value = {
            let x = self.value();
            let b = bias.value();
            let (_, d) = matrix_dims(&x, "add_row input")?;
            if b.len() != d {
                return Err(Error::Shape(format!("bias of length {} for width {d}", b.len())));
            }
            let data = x
                .data()
                .chunks(d)
                .flat_map(|row| row.iter().zip(b.data()).map(|(a, b)| a + b))
                .collect();
            Tensor::new(x.shape(), data)?
        };
        Ok(self.binary(bias, value, Op::AddRow(self.id, bias.id)))
    }

    pub fn mul(&self, other: Var<'t>) -> Result<Var<'t>> {
        let value = {
            let (a, b) = (self.value(), other.value());
            same_shape(&a, &b, "mul")?;
            let data = a.data().iter().zip(b.data()).map(|(a, b)| a * b).collect();
            Tensor::new(a.shape(), data)?
        };
        Ok(self.binary(other, value, Op::Mul(self.id, other.id)))
    }

    pub fn scale(&self, factor: f64) -> Var<'t> {
        let value = self.value().scale(factor);
        self.unary(value, Op::Scale(self.id, factor))
    }

    pub fn sum(&self) -> Var<'t> {
        let total = self.value().data().iter().sum();
        self.unary(Tensor::scalar(total), Op::Sum(self.id))
    }

    /// Elementwise `max(x, 0)`; the subgradient at 0 is 0.
    pub fn relu(&self) -> Var<'t> {
        let value = self.value().map(|z| if z > 0.0 { z } else { 0.0 });
        self.unary(value, Op::Relu(self.id))
    }

    /// Each row divided by `sqrt(mean(row^2) + RMS_NORM_EPS)`, then multiplied
    /// elementwise by `scale`.
    pub fn rms_norm(&self, scale: Var<'t>) -> Result<Var<'t>> {
        let (value, inv_rms) = {
            let x = self.value();
            let s = scale.value();
            let (n, d) = matrix_dims(&x, "rms_norm input")?;
            if s.len() != d {
                return Err(Error::Shape(format!("rms_norm scale of length {} for width {d}", s.len())));
            }
            let mut out = vec![0.0; n * d];
            let mut inv_rms = Vec::with_capacity(n);
            for (row, dst) in x.data().chunks(d).zip(out.chunks_mut(d)) {
                let ms = row.iter().map(|v| v * v).sum::<f64>() / d as f64;
                let r = 1.0 / (ms + RMS_NORM_EPS).sqrt();
                inv_rms.push(r);
                for ((o, v), g) in dst.iter_mut().zip(row).zip(s.data()) {
                    *o = v * r * g;
                }
            }
            (Tensor::new(&[n, d], out)?, inv_rms)
        };
        Ok(self.binary(
            scale,
            value,
            Op::RmsNorm {
                x: self.id,
                scale: scale.id,
                inv_rms,
            },
        ))
    }

    pub fn softmax_rows(&self) -> Result<Var<'t>> {
        let value = {
            let x = self.value();
            let (_, m) = matrix_dims(&x, "softmax_rows input")?;
            let mut out = x.data().to_vec();
            for row in out.chunks_mut(m) {
                softmax_in_place(row);
            }
            Tensor::new(x.shape(), out)?
        };
        Ok(self.unary(value, Op::SoftmaxRows(self.id)))
    }

    /// Mean negative log-probability of `labels` under row-wise softmax.
    pub fn cross_entropy(&self, labels: &[usize]) -> Result<Var<'t>> {
        let (loss, probs) = {
            let x = self.value();
            let (n, c) = matrix_dims(&x, "cross_entropy logits")?;
            if labels.len() != n {
                return Err(Error::Shape(format!("{} labels for {n} rows", labels.len())));
            }
            if let Some((i, &y)) = labels.iter().enumerate().find(|(_, &y)| y >= c) {
                return Err(Error::Index(format!("label {y} at row {i} with {c} classes")));
            }
            let mut probs = x.data().to_vec();
            let mut total = 0.0;
            for (row, &y) in probs.chunks_mut(c).zip(labels) {
                let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
                total += lse - row[y];
                for v in row.iter_mut() {
                    *v = (*v - lse).exp();
                }
            }
            (total / n as f64, probs)
        };
        Ok(self.unary(
            Tensor::scalar(loss),
            Op::CrossEntropy {
                logits: self.id,
                labels: labels.to_vec(),
                probs,
            },
        ))
    }

    /// Row `r` of the output is row `index[r]` of `self`.
    pub fn gather_rows(&self, index: &[usize]) -> Result<Var<'t>> {
        let value = {
            let x = self.value();
            let d = x.cols();
            if let Some(&bad) = index.iter().find(|&&i| i >= x.rows()) {
                return Err(Error::Index(format!("row {bad} of {}", x.rows())));
            }
            let mut out = Vec::with_capacity(index.len() * d);
            for &i in index {
                out.extend_from_slice(x.row(i));
            }
            Tensor::new(&[index.len(), d], out)?
        };
        Ok(self.unary(
            value,
            Op::GatherRows {
                src: self.id,
                index: index.to_vec(),
            },
        ))
    }

    /// Multi-head scaled dot-product attention with one query per sequence.
    ///
    /// `self` holds the queries `[batch, width]`; `keys` and `values` are
    /// `[batch * seq_len, width]` with rows grouped by sequence. `width` is
    /// split evenly into `heads` slices.
    pub fn attention(&self, keys: Var<'t>, values: Var<'t>, heads: usize, seq_len: usize) -> Result<Var<'t>> {
        let (value, weights) = {
            let (q, k, v) = (self.value(), keys.value(), values.value());
            let (batch, width) = matrix_dims(&q, "attention queries")?;
            if heads == 0 || width % heads != 0 {
                return Err(Error::Shape(format!("width {width} not divisible into {heads} heads")));
            }
            if k.shape() != [batch * seq_len, width] || v.shape() != k.shape() {
                return Err(Error::Shape(format!(
                    "keys {:?} / values {:?} for {batch} queries of width {width} and seq_len {seq_len}",
                    k.shape(),
                    v.shape()
                )));
            }
            let dh = width / heads;
            let inv_sqrt = 1.0 / (dh as f64).sqrt();
            let mut weights = vec![0.0; batch * heads * seq_len];
            let mut out = vec![0.0; batch * width];
            for b in 0..batch {
                for h in 0..heads {
                    let off = h * dh;
                    let qrow = &q.data()[b * width + off..b * width + off + dh];
                    let w = &mut weights[(b * heads + h) * seq_len..(b * heads + h + 1) * seq_len];
                    for (l, wl) in w.iter_mut().enumerate() {
                        let row = (b * seq_len + l) * width + off;
                        let krow = &k.data()[row..row + dh];
                        *wl = qrow.iter().zip(krow).map(|(a, b)| a * b).sum::<f64>() * inv_sqrt;
                    }
                    softmax_in_place(w);
                    let dst = &mut out[b * width + off..b * width + off + dh];
                    for (l, wl) in w.iter().enumerate() {
                        let row = (b * seq_len + l) * width + off;
                        for (o, vv) in dst.iter_mut().zip(&v.data()[row..row + dh]) {
                            *o += wl * vv;
                        }
                    }
                }
            }
            (Tensor::new(&[batch, width], out)?, weights)
        };
        let rg = self.tape.rg(self.id) || self.tape.rg(keys.id) || self.tape.rg(values.id);
        Ok(self.tape.push(
            value,
            Op::Attention {
                q: self.id,
                k: keys.id,
                v: values.id,
                heads,
                seq_len,
                weights,
            },
            rg,
        ))
    }
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    for v in row.iter_mut() {
        *v /= total;
    }
}
