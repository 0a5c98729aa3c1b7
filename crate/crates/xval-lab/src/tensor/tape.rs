//! Define-by-run autodiff tape.
//!
//! Every primitive appends one node holding the forward value and enough
//! bookkeeping to replay the chain rule. Inner loops of the heavy primitives
//! parallelize over independent output elements, so results are
//! bit-deterministic regardless of thread count.

use std::sync::Arc;

use rayon::prelude::*;

use super::{
    broadcast_shape, broadcast_strides, project_index, reduce_broadcast_grad, Result, Tensor,
    TensorError,
};
use crate::real::{real, Real};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

#[derive(Clone)]
enum Op {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Matmul(usize, usize),
    Permute(usize, Vec<usize>),
    Reshape(usize),
    Concat(Vec<usize>, usize),
    Slice {
        src: usize,
        axis: usize,
        start: usize,
    },
    Gather {
        src: usize,
        ids: Arc<Vec<usize>>,
    },
    ScatterRows {
        base: usize,
        rows: usize,
        idx: Arc<Vec<usize>>,
    },
    Gelu(usize),
    Softmax(usize),
    LayerNorm {
        x: usize,
        gain: usize,
        bias: Option<usize>,
        eps: f64,
    },
    MeanAll(usize),
    SumAll(usize),
    Scale(usize, f64),
    CrossEntropy {
        logits: usize,
        targets: Arc<Vec<usize>>,
    },
}

struct Node<T> {
    value: Tensor<T>,
    grad: Option<Vec<T>>,
    op: Op,
    requires_grad: bool,
}

/// Work threshold below which primitives stay single-threaded.
const PAR_THRESHOLD: usize = 1 << 15;

pub struct Tape<T> {
    nodes: Vec<Node<T>>,
    check_finite: bool,
}

impl<T: Real> Tape<T> {
    pub fn new(check_finite: bool) -> Self {
        Tape {
            nodes: Vec::new(),
            check_finite,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Insert a leaf value. Gradients accumulate into it when `requires_grad`.
    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> NodeId {
        self.push_node(value, Op::Leaf, requires_grad)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> NodeId {
        self.leaf(value, false)
    }

    pub fn value(&self, id: NodeId) -> &Tensor<T> {
        &self.nodes[id.0].value
    }

    pub fn grad(&self, id: NodeId) -> Option<&[T]> {
        self.nodes[id.0].grad.as_deref()
    }

    /// Move a gradient buffer out of the tape (the graph is dead after
    /// backward anyway).
    pub fn take_grad_of(&mut self, id: NodeId) -> Option<Vec<T>> {
        self.nodes[id.0].grad.take()
    }

    fn push_node(&mut self, value: Tensor<T>, op: Op, requires_grad: bool) -> NodeId {
        self.nodes.push(Node {
            value,
            grad: None,
            op,
            requires_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn push_checked(
        &mut self,
        name: &'static str,
        value: Tensor<T>,
        op: Op,
        requires_grad: bool,
    ) -> Result<NodeId> {
        if self.check_finite && !value.is_finite() {
            return Err(TensorError::NonFinite { op: name });
        }
        Ok(self.push_node(value, op, requires_grad))
    }

    fn requires(&self, ids: &[usize]) -> bool {
        ids.iter().any(|&i| self.nodes[i].requires_grad)
    }

    // ── Elementwise with broadcasting ───────────────────────────────────

    fn binary_elementwise(
        &mut self,
        name: &'static str,
        a: NodeId,
        b: NodeId,
        f: impl Fn(T, T) -> T + Sync,
        op: Op,
    ) -> Result<NodeId> {
        let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        let out_shape = broadcast_shape(name, av.shape(), bv.shape())?;
        let n: usize = out_shape.iter().product();
        let mut out = vec![T::zero(); n];
        if av.shape() == out_shape.as_slice() && bv.shape() == out_shape.as_slice() {
            for i in 0..n {
                out[i] = f(av.data()[i], bv.data()[i]);
            }
        } else {
            let sa = broadcast_strides(av.shape(), out_shape.len());
            let sb = broadcast_strides(bv.shape(), out_shape.len());
            for (i, o) in out.iter_mut().enumerate() {
                *o = f(
                    av.data()[project_index(i, &out_shape, &sa)],
                    bv.data()[project_index(i, &out_shape, &sb)],
                );
            }
        }
        let req = self.requires(&[a.0, b.0]);
        self.push_checked(name, Tensor::new(out_shape, out), op, req)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary_elementwise("add", a, b, |x, y| x + y, Op::Add(a.0, b.0))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary_elementwise("sub", a, b, |x, y| x - y, Op::Sub(a.0, b.0))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary_elementwise("mul", a, b, |x, y| x * y, Op::Mul(a.0, b.0))
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> Result<NodeId> {
        let av = &self.nodes[a.0].value;
        let cv: T = real(c);
        let out = Tensor::new(
            av.shape().to_vec(),
            av.data().iter().map(|&x| x * cv).collect(),
        );
        let req = self.requires(&[a.0]);
        self.push_checked("scale", out, Op::Scale(a.0, c), req)
    }

    // ── Matmul ──────────────────────────────────────────────────────────

    /// Batched matrix product `[..., m, k] @ [..., k, n]`. Leading axes must
    /// match exactly, or the right operand may be a plain 2-D matrix shared
    /// across the batch.
    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        let (ash, bsh) = (av.shape(), bv.shape());
        let mismatch = || TensorError::ShapeMismatch {
            op: "matmul",
            lhs: ash.to_vec(),
            rhs: bsh.to_vec(),
        };
        if ash.len() < 2 || bsh.len() < 2 {
            return Err(mismatch());
        }
        let (m, k) = (ash[ash.len() - 2], ash[ash.len() - 1]);
        let (kb, n) = (bsh[bsh.len() - 2], bsh[bsh.len() - 1]);
        if k != kb {
            return Err(mismatch());
        }
        let batch_shape = &ash[..ash.len() - 2];
        let shared_rhs = bsh.len() == 2;
        if !shared_rhs && &bsh[..bsh.len() - 2] != batch_shape {
            return Err(mismatch());
        }
        let batch: usize = batch_shape.iter().product();
        let mut out = vec![T::zero(); batch * m * n];
        let a_data = av.data();
        let b_data = bv.data();
        let work = batch * m * n * k;
        let run = |bi: usize, out_chunk: &mut [T]| {
            let a_off = bi * m * k;
            let b_off = if shared_rhs { 0 } else { bi * k * n };
            matmul_2d_acc(
                &a_data[a_off..a_off + m * k],
                &b_data[b_off..b_off + k * n],
                out_chunk,
                m,
                k,
                n,
            );
        };
        if work > PAR_THRESHOLD && batch > 1 {
            out.par_chunks_mut(m * n)
                .enumerate()
                .for_each(|(bi, chunk)| run(bi, chunk));
        } else if work > PAR_THRESHOLD {
            // single matrix: split over rows
            out.par_chunks_mut(n)
                .enumerate()
                .for_each(|(i, row)| {
                    matmul_2d_acc(&a_data[i * k..(i + 1) * k], b_data, row, 1, k, n);
                });
        } else {
            for bi in 0..batch {
                run(bi, &mut out[bi * m * n..(bi + 1) * m * n]);
            }
        }
        let mut out_shape = batch_shape.to_vec();
        out_shape.push(m);
        out_shape.push(n);
        let req = self.requires(&[a.0, b.0]);
        self.push_checked(
            "matmul",
            Tensor::new(out_shape, out),
            Op::Matmul(a.0, b.0),
            req,
        )
    }

    // ── Shape ops ───────────────────────────────────────────────────────

    pub fn permute(&mut self, a: NodeId, axes: &[usize]) -> Result<NodeId> {
        let av = &self.nodes[a.0].value;
        let rank = av.rank();
        let mut seen = vec![false; rank];
        if axes.len() != rank || axes.iter().any(|&x| x >= rank || std::mem::replace(&mut seen[x], true)) {
            return Err(TensorError::Invalid {
                op: "permute",
                msg: format!("axes {:?} invalid for rank {}", axes, rank),
            });
        }
        let out = permute_tensor(av, axes);
        let req = self.requires(&[a.0]);
        self.push_checked("permute", out, Op::Permute(a.0, axes.to_vec()), req)
    }

    pub fn reshape(&mut self, a: NodeId, new_shape: Vec<usize>) -> Result<NodeId> {
        let av = &self.nodes[a.0].value;
        if new_shape.iter().product::<usize>() != av.numel() {
            return Err(TensorError::ShapeMismatch {
                op: "reshape",
                lhs: av.shape().to_vec(),
                rhs: new_shape,
            });
        }
        let out = Tensor::new(new_shape, av.data().to_vec());
        let req = self.requires(&[a.0]);
        self.push_checked("reshape", out, Op::Reshape(a.0), req)
    }

    pub fn concat(&mut self, parts: &[NodeId], axis: usize) -> Result<NodeId> {
        if parts.is_empty() {
            return Err(TensorError::Invalid {
                op: "concat",
                msg: "no inputs".into(),
            });
        }
        let first = self.nodes[parts[0].0].value.shape().to_vec();
        if axis >= first.len() {
            return Err(TensorError::Invalid {
                op: "concat",
                msg: format!("axis {} out of range for rank {}", axis, first.len()),
            });
        }
        let mut axis_total = 0usize;
        for p in parts {
            let sh = self.nodes[p.0].value.shape();
            if sh.len() != first.len()
                || sh
                    .iter()
                    .enumerate()
                    .any(|(i, &d)| i != axis && d != first[i])
            {
                return Err(TensorError::ShapeMismatch {
                    op: "concat",
                    lhs: first.clone(),
                    rhs: sh.to_vec(),
                });
            }
            axis_total += sh[axis];
        }
        let mut out_shape = first.clone();
        out_shape[axis] = axis_total;
        let outer: usize = first[..axis].iter().product();
        let inner: usize = first[axis + 1..].iter().product();
        let mut out = vec![T::zero(); out_shape.iter().product()];
        let mut axis_off = 0usize;
        for p in parts {
            let v = &self.nodes[p.0].value;
            let pa = v.shape()[axis];
            for o in 0..outer {
                let src = &v.data()[o * pa * inner..(o + 1) * pa * inner];
                let dst_start = (o * axis_total + axis_off) * inner;
                out[dst_start..dst_start + pa * inner].copy_from_slice(src);
            }
            axis_off += pa;
        }
        let ids: Vec<usize> = parts.iter().map(|p| p.0).collect();
        let req = self.requires(&ids);
        self.push_checked("concat", Tensor::new(out_shape, out), Op::Concat(ids, axis), req)
    }

    pub fn slice(&mut self, a: NodeId, axis: usize, start: usize, len: usize) -> Result<NodeId> {
        let av = &self.nodes[a.0].value;
        let sh = av.shape().to_vec();
        if axis >= sh.len() || start + len > sh[axis] {
            return Err(TensorError::Invalid {
                op: "slice",
                msg: format!(
                    "range {}..{} on axis {} of shape {:?}",
                    start,
                    start + len,
                    axis,
                    sh
                ),
            });
        }
        let outer: usize = sh[..axis].iter().product();
        let inner: usize = sh[axis + 1..].iter().product();
        let mut out_shape = sh.clone();
        out_shape[axis] = len;
        let mut out = vec![T::zero(); outer * len * inner];
        for o in 0..outer {
            let src_start = (o * sh[axis] + start) * inner;
            out[o * len * inner..(o + 1) * len * inner]
                .copy_from_slice(&av.data()[src_start..src_start + len * inner]);
        }
        let req = self.requires(&[a.0]);
        self.push_checked(
            "slice",
            Tensor::new(out_shape, out),
            Op::Slice {
                src: a.0,
                axis,
                start,
            },
            req,
        )
    }

    /// Row gather along axis 0 (embedding lookup). Output shape
    /// `[ids.len(), src.shape[1..]]`.
    pub fn gather_rows(&mut self, src: NodeId, ids: &[usize]) -> Result<NodeId> {
        let sv = &self.nodes[src.0].value;
        if sv.rank() == 0 {
            return Err(TensorError::Invalid {
                op: "gather",
                msg: "source must have rank >= 1".into(),
            });
        }
        let rows = sv.shape()[0];
        if let Some(&bad) = ids.iter().find(|&&i| i >= rows) {
            return Err(TensorError::Invalid {
                op: "gather",
                msg: format!("row index {} out of range {}", bad, rows),
            });
        }
        let row_len: usize = sv.shape()[1..].iter().product();
        let mut out = vec![T::zero(); ids.len() * row_len];
        for (k, &i) in ids.iter().enumerate() {
            out[k * row_len..(k + 1) * row_len]
                .copy_from_slice(&sv.data()[i * row_len..(i + 1) * row_len]);
        }
        let mut out_shape = vec![ids.len()];
        out_shape.extend_from_slice(&sv.shape()[1..]);
        let req = self.requires(&[src.0]);
        self.push_checked(
            "gather",
            Tensor::new(out_shape, out),
            Op::Gather {
                src: src.0,
                ids: Arc::new(ids.to_vec()),
            },
            req,
        )
    }

    /// Replace rows of `base` (axis 0) at distinct indices `idx` with the rows
    /// of `rows`. Gradients flow to the surviving rows of `base` and to `rows`.
    pub fn scatter_rows(&mut self, base: NodeId, idx: &[usize], rows: NodeId) -> Result<NodeId> {
        let bv = &self.nodes[base.0].value;
        let rv = &self.nodes[rows.0].value;
        let nrows = bv.shape().first().copied().unwrap_or(0);
        let row_len: usize = bv.shape()[1..].iter().product();
        let expected: usize = idx.len() * row_len;
        if rv.numel() != expected {
            return Err(TensorError::ShapeMismatch {
                op: "scatter",
                lhs: bv.shape().to_vec(),
                rhs: rv.shape().to_vec(),
            });
        }
        let mut sorted = idx.to_vec();
        sorted.sort_unstable();
        if sorted.windows(2).any(|w| w[0] == w[1]) || sorted.last().is_some_and(|&m| m >= nrows) {
            return Err(TensorError::Invalid {
                op: "scatter",
                msg: "indices must be distinct and in range".into(),
            });
        }
        let mut out = bv.data().to_vec();
        for (k, &i) in idx.iter().enumerate() {
            out[i * row_len..(i + 1) * row_len]
                .copy_from_slice(&rv.data()[k * row_len..(k + 1) * row_len]);
        }
        let shape = bv.shape().to_vec();
        let req = self.requires(&[base.0, rows.0]);
        self.push_checked(
            "scatter",
            Tensor::new(shape, out),
            Op::ScatterRows {
                base: base.0,
                rows: rows.0,
                idx: Arc::new(idx.to_vec()),
            },
            req,
        )
    }

    // ── Nonlinearities and normalization ────────────────────────────────

    pub fn gelu(&mut self, a: NodeId) -> Result<NodeId> {
        let av = &self.nodes[a.0].value;
        let mut out = av.data().to_vec();
        if out.len() > PAR_THRESHOLD {
            out.par_iter_mut().for_each(|x| *x = gelu_scalar(*x));
        } else {
            out.iter_mut().for_each(|x| *x = gelu_scalar(*x));
        }
        let shape = av.shape().to_vec();
        let req = self.requires(&[a.0]);
        self.push_checked("gelu", Tensor::new(shape, out), Op::Gelu(a.0), req)
    }

    /// Numerically stable softmax over the last axis.
    pub fn softmax(&mut self, a: NodeId) -> Result<NodeId> {
        let av = &self.nodes[a.0].value;
        if av.rank() == 0 || *av.shape().last().unwrap() == 0 {
            return Err(TensorError::Invalid {
                op: "softmax",
                msg: "empty last axis".into(),
            });
        }
        let d = *av.shape().last().unwrap();
        let mut out = av.data().to_vec();
        let apply = |row: &mut [T]| {
            let max = row.iter().cloned().fold(T::neg_infinity(), T::max);
            let mut z = T::zero();
            for x in row.iter_mut() {
                *x = (*x - max).exp();
                z += *x;
            }
            for x in row.iter_mut() {
                *x = *x / z;
            }
        };
        if out.len() > PAR_THRESHOLD {
            out.par_chunks_mut(d).for_each(apply);
        } else {
            out.chunks_mut(d).for_each(apply);
        }
        let shape = av.shape().to_vec();
        let req = self.requires(&[a.0]);
        self.push_checked("softmax", Tensor::new(shape, out), Op::Softmax(a.0), req)
    }

    /// Layer normalization over the last axis with learned gain and optional
    /// bias: `y = (x - mean) / sqrt(var + eps) * gain (+ bias)`.
    pub fn layer_norm(
        &mut self,
        x: NodeId,
        gain: NodeId,
        bias: Option<NodeId>,
        eps: f64,
    ) -> Result<NodeId> {
        let xv = &self.nodes[x.0].value;
        let d = *xv.shape().last().unwrap_or(&0);
        if d == 0 {
            return Err(TensorError::Invalid {
                op: "layer_norm",
                msg: "empty last axis".into(),
            });
        }
        if eps <= 0.0 {
            return Err(TensorError::Invalid {
                op: "layer_norm",
                msg: "eps must be positive".into(),
            });
        }
        let gv = &self.nodes[gain.0].value;
        if gv.numel() != d {
            return Err(TensorError::ShapeMismatch {
                op: "layer_norm",
                lhs: xv.shape().to_vec(),
                rhs: gv.shape().to_vec(),
            });
        }
        if let Some(b) = bias {
            if self.nodes[b.0].value.numel() != d {
                return Err(TensorError::ShapeMismatch {
                    op: "layer_norm",
                    lhs: xv.shape().to_vec(),
                    rhs: self.nodes[b.0].value.shape().to_vec(),
                });
            }
        }
        let epsv: T = real(eps);
        let g = gv.data().to_vec();
        let b: Option<Vec<T>> = bias.map(|b| self.nodes[b.0].value.data().to_vec());
        let mut out = xv.data().to_vec();
        let apply = |row: &mut [T]| {
            let inv_d = T::one() / real::<T>(d as f64);
            let mean = row.iter().cloned().sum::<T>() * inv_d;
            let var = row
                .iter()
                .map(|&v| (v - mean) * (v - mean))
                .sum::<T>()
                * inv_d;
            let inv_std = T::one() / (var + epsv).sqrt();
            for (j, v) in row.iter_mut().enumerate() {
                let xh = (*v - mean) * inv_std;
                *v = xh * g[j] + b.as_ref().map_or(T::zero(), |b| b[j]);
            }
        };
        if out.len() > PAR_THRESHOLD {
            out.par_chunks_mut(d).for_each(apply);
        } else {
            out.chunks_mut(d).for_each(apply);
        }
        let shape = xv.shape().to_vec();
        let mut parents = vec![x.0, gain.0];
        if let Some(b) = bias {
            parents.push(b.0);
        }
        let req = self.requires(&parents);
        self.push_checked(
            "layer_norm",
            Tensor::new(shape, out),
            Op::LayerNorm {
                x: x.0,
                gain: gain.0,
                bias: bias.map(|b| b.0),
                eps,
            },
            req,
        )
    }

    // ── Reductions and losses ───────────────────────────────────────────

    pub fn sum_all(&mut self, a: NodeId) -> Result<NodeId> {
        let s: T = self.nodes[a.0].value.data().iter().cloned().sum();
        let req = self.requires(&[a.0]);
        self.push_checked("sum", Tensor::scalar(s), Op::SumAll(a.0), req)
    }

    pub fn mean_all(&mut self, a: NodeId) -> Result<NodeId> {
        let v = &self.nodes[a.0].value;
        if v.numel() == 0 {
            return Err(TensorError::Invalid {
                op: "mean",
                msg: "empty tensor".into(),
            });
        }
        let s: T = v.data().iter().cloned().sum::<T>() / real(v.numel() as f64);
        let req = self.requires(&[a.0]);
        self.push_checked("mean", Tensor::scalar(s), Op::MeanAll(a.0), req)
    }

    /// Mean cross-entropy of `logits [M, V]` against class indices, with the
    /// log-sum-exp folded in for stability.
    pub fn cross_entropy(&mut self, logits: NodeId, targets: &[usize]) -> Result<NodeId> {
        let lv = &self.nodes[logits.0].value;
        if lv.rank() != 2 || lv.shape()[0] != targets.len() {
            return Err(TensorError::Invalid {
                op: "cross_entropy",
                msg: format!(
                    "logits {:?} vs {} targets",
                    lv.shape(),
                    targets.len()
                ),
            });
        }
        let v = lv.shape()[1];
        if let Some(&bad) = targets.iter().find(|&&t| t >= v) {
            return Err(TensorError::Invalid {
                op: "cross_entropy",
                msg: format!("target {} out of range {}", bad, v),
            });
        }
        let m = targets.len();
        let data = lv.data();
        let total: T = (0..m)
            .map(|i| {
                let row = &data[i * v..(i + 1) * v];
                let max = row.iter().cloned().fold(T::neg_infinity(), T::max);
                let lse = row.iter().map(|&x| (x - max).exp()).sum::<T>().ln() + max;
                lse - row[targets[i]]
            })
            .sum();
        let loss = total / real(m as f64);
        let req = self.requires(&[logits.0]);
        self.push_checked(
            "cross_entropy",
            Tensor::scalar(loss),
            Op::CrossEntropy {
                logits: logits.0,
                targets: Arc::new(targets.to_vec()),
            },
            req,
        )
    }

    // ── Backward ────────────────────────────────────────────────────────

    /// Reverse accumulation from a scalar loss. Exact derivatives: every
    /// backward rule is the transpose of its forward linearization.
    pub fn backward(&mut self, loss: NodeId) -> Result<()> {
        if self.nodes[loss.0].value.numel() != 1 {
            return Err(TensorError::Invalid {
                op: "backward",
                msg: format!(
                    "loss must be scalar-shaped, got {:?}",
                    self.nodes[loss.0].value.shape()
                ),
            });
        }
        self.nodes[loss.0].grad = Some(vec![T::one()]);
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad || self.nodes[i].grad.is_none() {
                continue;
            }
            let op = self.nodes[i].op.clone();
            match op {
                Op::Leaf => {}
                Op::Add(a, b) => {
                    let g = self.take_grad(i);
                    let out_shape = self.nodes[i].value.shape().to_vec();
                    self.accumulate_broadcast(a, &g, &out_shape);
                    self.accumulate_broadcast(b, &g, &out_shape);
                    self.nodes[i].grad = Some(g);
                }
                Op::Sub(a, b) => {
                    let g = self.take_grad(i);
                    let out_shape = self.nodes[i].value.shape().to_vec();
                    self.accumulate_broadcast(a, &g, &out_shape);
                    let neg: Vec<T> = g.iter().map(|&x| -x).collect();
                    self.accumulate_broadcast(b, &neg, &out_shape);
                    self.nodes[i].grad = Some(g);
                }
                Op::Mul(a, b) => {
                    let g = self.take_grad(i);
                    let out_shape = self.nodes[i].value.shape().to_vec();
                    if self.nodes[a].requires_grad {
                        let da = self.mul_partial(&g, b, &out_shape);
                        self.accumulate_broadcast(a, &da, &out_shape);
                    }
                    if self.nodes[b].requires_grad {
                        let db = self.mul_partial(&g, a, &out_shape);
                        self.accumulate_broadcast(b, &db, &out_shape);
                    }
                    self.nodes[i].grad = Some(g);
                }
                Op::Matmul(a, b) => self.backward_matmul(i, a, b),
                Op::Permute(a, axes) => {
                    let g = self.take_grad(i);
                    let out_shape = self.nodes[i].value.shape().to_vec();
                    let mut inverse = vec![0usize; axes.len()];
                    for (dst, &src) in axes.iter().enumerate() {
                        inverse[src] = dst;
                    }
                    let gt = permute_tensor(&Tensor::new(out_shape, g.clone()), &inverse);
                    self.accumulate(a, gt.data());
                    self.nodes[i].grad = Some(g);
                }
                Op::Reshape(a) => {
                    let g = self.take_grad(i);
                    self.accumulate(a, &g);
                    self.nodes[i].grad = Some(g);
                }
                Op::Concat(parts, axis) => {
                    let g = self.take_grad(i);
                    let out_shape = self.nodes[i].value.shape().to_vec();
                    let outer: usize = out_shape[..axis].iter().product();
                    let inner: usize = out_shape[axis + 1..].iter().product();
                    let total = out_shape[axis];
                    let mut axis_off = 0usize;
                    for &p in &parts {
                        let pa = self.nodes[p].value.shape()[axis];
                        if self.nodes[p].requires_grad {
                            let mut dp = vec![T::zero(); outer * pa * inner];
                            for o in 0..outer {
                                let src_start = (o * total + axis_off) * inner;
                                dp[o * pa * inner..(o + 1) * pa * inner]
                                    .copy_from_slice(&g[src_start..src_start + pa * inner]);
                            }
                            self.accumulate(p, &dp);
                        }
                        axis_off += pa;
                    }
                    self.nodes[i].grad = Some(g);
                }
                Op::Slice { src, axis, start } => {
                    let g = self.take_grad(i);
                    let out_shape = self.nodes[i].value.shape().to_vec();
                    let src_shape = self.nodes[src].value.shape().to_vec();
                    let outer: usize = src_shape[..axis].iter().product();
                    let inner: usize = src_shape[axis + 1..].iter().product();
                    let len = out_shape[axis];
                    let mut ds = vec![T::zero(); self.nodes[src].value.numel()];
                    for o in 0..outer {
                        let dst_start = (o * src_shape[axis] + start) * inner;
                        ds[dst_start..dst_start + len * inner]
                            .copy_from_slice(&g[o * len * inner..(o + 1) * len * inner]);
                    }
                    self.accumulate(src, &ds);
                    self.nodes[i].grad = Some(g);
                }
                Op::Gather { src, ids } => {
                    let g = self.take_grad(i);
                    let row_len: usize = self.nodes[src].value.shape()[1..].iter().product();
                    let sg = self.grad_buffer(src);
                    for (k, &row) in ids.iter().enumerate() {
                        for j in 0..row_len {
                            sg[row * row_len + j] += g[k * row_len + j];
                        }
                    }
                    self.nodes[i].grad = Some(g);
                }
                Op::ScatterRows { base, rows, idx } => {
                    let g = self.take_grad(i);
                    let row_len: usize = self.nodes[base].value.shape()[1..].iter().product();
                    if self.nodes[base].requires_grad {
                        let mut db = g.clone();
                        for &r in idx.iter() {
                            for j in 0..row_len {
                                db[r * row_len + j] = T::zero();
                            }
                        }
                        self.accumulate(base, &db);
                    }
                    if self.nodes[rows].requires_grad {
                        let mut dr = vec![T::zero(); idx.len() * row_len];
                        for (k, &r) in idx.iter().enumerate() {
                            dr[k * row_len..(k + 1) * row_len]
                                .copy_from_slice(&g[r * row_len..(r + 1) * row_len]);
                        }
                        self.accumulate(rows, &dr);
                    }
                    self.nodes[i].grad = Some(g);
                }
                Op::Gelu(a) => {
                    let g = self.take_grad(i);
                    let x = self.nodes[a].value.data();
                    let mut da = vec![T::zero(); g.len()];
                    if g.len() > PAR_THRESHOLD {
                        da.par_iter_mut().enumerate().for_each(|(j, d)| {
                            *d = g[j] * gelu_grad_scalar(x[j]);
                        });
                    } else {
                        for j in 0..g.len() {
                            da[j] = g[j] * gelu_grad_scalar(x[j]);
                        }
                    }
                    self.accumulate(a, &da);
                    self.nodes[i].grad = Some(g);
                }
                Op::Softmax(a) => {
                    let g = self.take_grad(i);
                    let s = self.nodes[i].value.data();
                    let d = *self.nodes[i].value.shape().last().unwrap();
                    let mut da = vec![T::zero(); g.len()];
                    let run = |(row, chunk): (usize, &mut [T])| {
                        let off = row * d;
                        let mut dot = T::zero();
                        for j in 0..d {
                            dot += g[off + j] * s[off + j];
                        }
                        for j in 0..d {
                            chunk[j] = s[off + j] * (g[off + j] - dot);
                        }
                    };
                    if g.len() > PAR_THRESHOLD {
                        da.par_chunks_mut(d).enumerate().for_each(run);
                    } else {
                        da.chunks_mut(d).enumerate().for_each(run);
                    }
                    self.accumulate(a, &da);
                    self.nodes[i].grad = Some(g);
                }
                Op::LayerNorm { x, gain, bias, eps } => {
                    self.backward_layer_norm(i, x, gain, bias, eps);
                }
                Op::SumAll(a) => {
                    let g = self.take_grad(i)[0];
                    let da = vec![g; self.nodes[a].value.numel()];
                    self.accumulate(a, &da);
                    self.nodes[i].grad = Some(vec![g]);
                }
                Op::MeanAll(a) => {
                    let g = self.take_grad(i)[0];
                    let n = self.nodes[a].value.numel();
                    let da = vec![g / real(n as f64); n];
                    self.accumulate(a, &da);
                    self.nodes[i].grad = Some(vec![g]);
                }
                Op::Scale(a, c) => {
                    let g = self.take_grad(i);
                    let cv: T = real(c);
                    let da: Vec<T> = g.iter().map(|&x| x * cv).collect();
                    self.accumulate(a, &da);
                    self.nodes[i].grad = Some(g);
                }
                Op::CrossEntropy { logits, targets } => {
                    let g = self.take_grad(i)[0];
                    let lv = &self.nodes[logits].value;
                    let (m, v) = (lv.shape()[0], lv.shape()[1]);
                    let data = lv.data();
                    let scale = g / real::<T>(m as f64);
                    let mut dl = vec![T::zero(); m * v];
                    for r in 0..m {
                        let row = &data[r * v..(r + 1) * v];
                        let max = row.iter().cloned().fold(T::neg_infinity(), T::max);
                        let mut z = T::zero();
                        let out = &mut dl[r * v..(r + 1) * v];
                        for (j, &x) in row.iter().enumerate() {
                            out[j] = (x - max).exp();
                            z += out[j];
                        }
                        for (j, o) in out.iter_mut().enumerate() {
                            let p = *o / z;
                            let y = if j == targets[r] { T::one() } else { T::zero() };
                            *o = (p - y) * scale;
                        }
                    }
                    self.accumulate(logits, &dl);
                    self.nodes[i].grad = Some(vec![g]);
                }
            }
        }
        Ok(())
    }

    fn take_grad(&mut self, i: usize) -> Vec<T> {
        self.nodes[i].grad.take().expect("grad present")
    }

    fn grad_buffer(&mut self, i: usize) -> &mut Vec<T> {
        let n = self.nodes[i].value.numel();
        self.nodes[i].grad.get_or_insert_with(|| vec![T::zero(); n])
    }

    fn accumulate(&mut self, i: usize, g: &[T]) {
        if !self.nodes[i].requires_grad {
            return;
        }
        let buf = self.grad_buffer(i);
        if g.len() > PAR_THRESHOLD {
            buf.par_chunks_mut(1 << 14)
                .zip(g.par_chunks(1 << 14))
                .for_each(|(bs, gs)| {
                    for (a, b) in bs.iter_mut().zip(gs) {
                        *a += *b;
                    }
                });
        } else {
            for (a, b) in buf.iter_mut().zip(g) {
                *a += *b;
            }
        }
    }

    fn accumulate_broadcast(&mut self, i: usize, g: &[T], out_shape: &[usize]) {
        if !self.nodes[i].requires_grad {
            return;
        }
        let in_shape = self.nodes[i].value.shape().to_vec();
        let buf = self.grad_buffer(i);
        // buf borrow ends before reduce? reduce writes into buf directly
        reduce_broadcast_grad(g, out_shape, &in_shape, buf);
    }

    /// d(out)/d(one factor) of a broadcast product: grad times the other
    /// factor expanded to the output shape.
    fn mul_partial(&self, g: &[T], other: usize, out_shape: &[usize]) -> Vec<T> {
        let ov = &self.nodes[other].value;
        if ov.shape() == out_shape {
            return g.iter().zip(ov.data()).map(|(&x, &y)| x * y).collect();
        }
        let strides = broadcast_strides(ov.shape(), out_shape.len());
        g.iter()
            .enumerate()
            .map(|(flat, &x)| x * ov.data()[project_index(flat, out_shape, &strides)])
            .collect()
    }

    fn backward_matmul(&mut self, i: usize, a: usize, b: usize) {
        let g = self.take_grad(i);
        let ash = self.nodes[a].value.shape().to_vec();
        let bsh = self.nodes[b].value.shape().to_vec();
        let (m, k) = (ash[ash.len() - 2], ash[ash.len() - 1]);
        let n = bsh[bsh.len() - 1];
        let batch: usize = ash[..ash.len() - 2].iter().product();
        let shared_rhs = bsh.len() == 2;

        if self.nodes[a].requires_grad {
            // dA = dC @ B^T, batched
            let b_data = self.nodes[b].value.data();
            let mut da = vec![T::zero(); batch * m * k];
            let run = |bi: usize, chunk: &mut [T]| {
                let g_off = bi * m * n;
                let b_off = if shared_rhs { 0 } else { bi * k * n };
                matmul_nt_acc(
                    &g[g_off..g_off + m * n],
                    &b_data[b_off..b_off + k * n],
                    chunk,
                    m,
                    n,
                    k,
                );
            };
            if batch * m * k * n > PAR_THRESHOLD && batch > 1 {
                da.par_chunks_mut(m * k)
                    .enumerate()
                    .for_each(|(bi, chunk)| run(bi, chunk));
            } else if batch * m * k * n > PAR_THRESHOLD {
                da.par_chunks_mut(k).enumerate().for_each(|(r, row)| {
                    matmul_nt_acc(&g[r * n..(r + 1) * n], b_data, row, 1, n, k);
                });
            } else {
                for bi in 0..batch {
                    run(bi, &mut da[bi * m * k..(bi + 1) * m * k]);
                }
            }
            self.accumulate(a, &da);
        }

        if self.nodes[b].requires_grad {
            // dB = A^T @ dC, summed over the batch when B is shared
            let a_data = self.nodes[a].value.data();
            if shared_rhs {
                let rows_total = batch * m;
                let work = rows_total * k * n;
                let db = if work > PAR_THRESHOLD && rows_total >= 32 {
                    // deterministic: fixed row chunks, partials reduced in order
                    let chunk_rows = rows_total.div_ceil(rayon::current_num_threads().max(1));
                    let ranges: Vec<(usize, usize)> = (0..rows_total)
                        .step_by(chunk_rows.max(1))
                        .map(|s| (s, (s + chunk_rows).min(rows_total)))
                        .collect();
                    let partials: Vec<Vec<T>> = ranges
                        .par_iter()
                        .map(|&(s, e)| {
                            let mut acc = vec![T::zero(); k * n];
                            matmul_tn_acc(
                                &a_data[s * k..e * k],
                                &g[s * n..e * n],
                                &mut acc,
                                e - s,
                                k,
                                n,
                            );
                            acc
                        })
                        .collect();
                    let mut db = vec![T::zero(); k * n];
                    for p in partials {
                        for (x, y) in db.iter_mut().zip(&p) {
                            *x += *y;
                        }
                    }
                    db
                } else {
                    let mut db = vec![T::zero(); k * n];
                    matmul_tn_acc(a_data, &g, &mut db, rows_total, k, n);
                    db
                };
                self.accumulate(b, &db);
            } else {
                let mut db = vec![T::zero(); batch * k * n];
                let run = |bi: usize, chunk: &mut [T]| {
                    matmul_tn_acc(
                        &a_data[bi * m * k..(bi + 1) * m * k],
                        &g[bi * m * n..(bi + 1) * m * n],
                        chunk,
                        m,
                        k,
                        n,
                    );
                };
                if batch * m * k * n > PAR_THRESHOLD && batch > 1 {
                    db.par_chunks_mut(k * n)
                        .enumerate()
                        .for_each(|(bi, chunk)| run(bi, chunk));
                } else {
                    for bi in 0..batch {
                        run(bi, &mut db[bi * k * n..(bi + 1) * k * n]);
                    }
                }
                self.accumulate(b, &db);
            }
        }
        self.nodes[i].grad = Some(g);
    }

    fn backward_layer_norm(
        &mut self,
        i: usize,
        x: usize,
        gain: usize,
        bias: Option<usize>,
        eps: f64,
    ) {
        let g = self.take_grad(i);
        let xv = self.nodes[x].value.data();
        let gv = self.nodes[gain].value.data().to_vec();
        let d = *self.nodes[i].value.shape().last().unwrap();
        let rows = xv.len() / d;
        let epsv: T = real(eps);
        let inv_d = T::one() / real::<T>(d as f64);

        let mut dx = vec![T::zero(); xv.len()];
        let mut dgain = vec![T::zero(); d];
        let mut dbias = vec![T::zero(); d];
        for r in 0..rows {
            let xr = &xv[r * d..(r + 1) * d];
            let gr = &g[r * d..(r + 1) * d];
            let mean = xr.iter().cloned().sum::<T>() * inv_d;
            let var = xr.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() * inv_d;
            let inv_std = T::one() / (var + epsv).sqrt();
            let mut sum_gh = T::zero();
            let mut sum_gh_xh = T::zero();
            for j in 0..d {
                let xh = (xr[j] - mean) * inv_std;
                let gh = gr[j] * gv[j];
                sum_gh += gh;
                sum_gh_xh += gh * xh;
                dgain[j] += gr[j] * xh;
                dbias[j] += gr[j];
            }
            let mean_gh = sum_gh * inv_d;
            let mean_gh_xh = sum_gh_xh * inv_d;
            for j in 0..d {
                let xh = (xr[j] - mean) * inv_std;
                dx[r * d + j] = (gr[j] * gv[j] - mean_gh - xh * mean_gh_xh) * inv_std;
            }
        }
        self.accumulate(x, &dx);
        self.accumulate(gain, &dgain);
        if let Some(b) = bias {
            self.accumulate(b, &dbias);
        }
        self.nodes[i].grad = Some(g);
    }
}

// ── Kernels ─────────────────────────────────────────────────────────────

/// C[m,n] += A[m,k] @ B[k,n]
fn matmul_2d_acc<T: Real>(a: &[T], b: &[T], c: &mut [T], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        let c_row = &mut c[i * n..(i + 1) * n];
        for (p, &av) in a_row.iter().enumerate() {
            let b_row = &b[p * n..(p + 1) * n];
            for (cv, &bv) in c_row.iter_mut().zip(b_row) {
                *cv += av * bv;
            }
        }
    }
}

/// C[m,k] += G[m,n] @ B[k,n]^T  (rows of both operands contiguous)
fn matmul_nt_acc<T: Real>(g: &[T], b: &[T], c: &mut [T], m: usize, n: usize, k: usize) {
    for i in 0..m {
        let g_row = &g[i * n..(i + 1) * n];
        let c_row = &mut c[i * k..(i + 1) * k];
        for (p, cv) in c_row.iter_mut().enumerate() {
            let b_row = &b[p * n..(p + 1) * n];
            let mut s = T::zero();
            for (x, y) in g_row.iter().zip(b_row) {
                s += *x * *y;
            }
            *cv += s;
        }
    }
}

/// C[k,n] += A[m,k]^T @ G[m,n]
fn matmul_tn_acc<T: Real>(a: &[T], g: &[T], c: &mut [T], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let g_row = &g[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            let c_row = &mut c[p * n..(p + 1) * n];
            for (cv, &gv) in c_row.iter_mut().zip(g_row) {
                *cv += av * gv;
            }
        }
    }
}

fn permute_tensor<T: Real>(t: &Tensor<T>, axes: &[usize]) -> Tensor<T> {
    let in_shape = t.shape();
    let rank = in_shape.len();
    let out_shape: Vec<usize> = axes.iter().map(|&a| in_shape[a]).collect();
    // hot layouts get strided copies instead of per-element index math
    if rank == 2 && axes == [1, 0] {
        let (r, c) = (in_shape[0], in_shape[1]);
        let mut out = vec![T::zero(); t.numel()];
        let src = t.data();
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = src[i * c + j];
            }
        }
        return Tensor::new(out_shape, out);
    }
    if rank == 4 && axes == [0, 2, 1, 3] {
        let (b, d1, d2, d3) = (in_shape[0], in_shape[1], in_shape[2], in_shape[3]);
        let mut out = vec![T::zero(); t.numel()];
        let src = t.data();
        for bi in 0..b {
            for i in 0..d1 {
                for j in 0..d2 {
                    let s = ((bi * d1 + i) * d2 + j) * d3;
                    let o = ((bi * d2 + j) * d1 + i) * d3;
                    out[o..o + d3].copy_from_slice(&src[s..s + d3]);
                }
            }
        }
        return Tensor::new(out_shape, out);
    }
    if rank == 4 && axes == [0, 1, 3, 2] {
        let (b, h, r, c) = (in_shape[0], in_shape[1], in_shape[2], in_shape[3]);
        let mut out = vec![T::zero(); t.numel()];
        let src = t.data();
        for m in 0..b * h {
            let off = m * r * c;
            for i in 0..r {
                for j in 0..c {
                    out[off + j * r + i] = src[off + i * c + j];
                }
            }
        }
        return Tensor::new(out_shape, out);
    }
    let mut in_strides = vec![1usize; rank];
    for d in (0..rank.saturating_sub(1)).rev() {
        in_strides[d] = in_strides[d + 1] * in_shape[d + 1];
    }
    let mut out = vec![T::zero(); t.numel()];
    let mut coords = vec![0usize; rank];
    for (flat, o) in out.iter_mut().enumerate() {
        let mut rem = flat;
        for d in (0..rank).rev() {
            coords[d] = rem % out_shape[d];
            rem /= out_shape[d];
        }
        let mut src = 0usize;
        for d in 0..rank {
            src += coords[d] * in_strides[axes[d]];
        }
        *o = t.data()[src];
    }
    Tensor::new(out_shape, out)
}

#[inline]
fn gelu_scalar<T: Real>(x: T) -> T {
    // tanh approximation, GPT-2 convention
    let c: T = real(0.7978845608028654); // sqrt(2/pi)
    let a: T = real(0.044715);
    let half: T = real(0.5);
    half * x * (T::one() + (c * (x + a * x * x * x)).tanh())
}

#[inline]
fn gelu_grad_scalar<T: Real>(x: T) -> T {
    let c: T = real(0.7978845608028654);
    let a: T = real(0.044715);
    let half: T = real(0.5);
    let inner = c * (x + a * x * x * x);
    let t = inner.tanh();
    let sech2 = T::one() - t * t;
    let dinner = c * (T::one() + real::<T>(3.0) * a * x * x);
    half * (T::one() + t) + half * x * sech2 * dinner
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t64(shape: &[usize], data: &[f64]) -> Tensor<f64> {
        Tensor::new(shape.to_vec(), data.to_vec())
    }

    #[test]
    fn add_elementwise() {
        let mut tape = Tape::new(true);
        let a = tape.leaf(t64(&[2], &[1.0, 2.0]), false);
        let b = tape.leaf(t64(&[2], &[3.0, 4.0]), false);
        let c = tape.add(a, b).unwrap();
        assert_eq!(tape.value(c).data(), &[4.0, 6.0]);
    }

    #[test]
    fn matmul_identity() {
        let mut tape = Tape::new(true);
        let eye = tape.leaf(
            t64(&[3, 3], &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]),
            false,
        );
        let a_data = [0.3, -1.2, 2.0, 4.5, 0.0, -0.7, 1.1, 2.2, 3.3];
        let a = tape.leaf(t64(&[3, 3], &a_data), false);
        let c = tape.matmul(eye, a).unwrap();
        assert_eq!(tape.value(c).data(), &a_data);
    }

    #[test]
    fn softmax_symmetry() {
        let mut tape = Tape::new(true);
        let a = tape.leaf(t64(&[2], &[0.0, 0.0]), false);
        let s = tape.softmax(a).unwrap();
        assert_eq!(tape.value(s).data(), &[0.5, 0.5]);
    }

    #[test]
    fn shape_mismatch_names_primitive() {
        let mut tape: Tape<f64> = Tape::new(true);
        let a = tape.leaf(Tensor::zeros(vec![2, 3]), false);
        let b = tape.leaf(Tensor::zeros(vec![2, 3]), false);
        let err = tape.matmul(a, b).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("matmul") && msg.contains("[2, 3]"), "{msg}");
    }

    #[test]
    fn backward_sum_of_squares() {
        // loss = sum(x^2), x = [1, 2] -> grad [2, 4]
        let mut tape = Tape::new(true);
        let x = tape.leaf(t64(&[2], &[1.0, 2.0]), true);
        let sq = tape.mul(x, x).unwrap();
        let loss = tape.sum_all(sq).unwrap();
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[2.0, 4.0]);
    }

    #[test]
    fn backward_linear_mse_matches_closed_form() {
        // loss = mean((Wx - y)^2); dW = 2 (Wx - y) x^T / n
        let w_data = [0.5, -0.3, 0.8, 0.1, -0.6, 0.9];
        let x_data = [1.0, -2.0, 0.5];
        let y_data = [0.7, -0.2];
        let mut tape = Tape::new(true);
        let w = tape.leaf(t64(&[2, 3], &w_data), true);
        let x = tape.leaf(t64(&[3, 1], &x_data), false);
        let y = tape.leaf(t64(&[2, 1], &y_data), false);
        let wx = tape.matmul(w, x).unwrap();
        let diff = tape.sub(wx, y).unwrap();
        let sq = tape.mul(diff, diff).unwrap();
        let loss = tape.mean_all(sq).unwrap();
        tape.backward(loss).unwrap();

        let r0 = w_data[0] * x_data[0] + w_data[1] * x_data[1] + w_data[2] * x_data[2] - y_data[0];
        let r1 = w_data[3] * x_data[0] + w_data[4] * x_data[1] + w_data[5] * x_data[2] - y_data[1];
        let expected = [
            2.0 * r0 * x_data[0] / 2.0,
            2.0 * r0 * x_data[1] / 2.0,
            2.0 * r0 * x_data[2] / 2.0,
            2.0 * r1 * x_data[0] / 2.0,
            2.0 * r1 * x_data[1] / 2.0,
            2.0 * r1 * x_data[2] / 2.0,
        ];
        for (g, e) in tape.grad(w).unwrap().iter().zip(&expected) {
            assert!((g - e).abs() < 1e-12, "{g} vs {e}");
        }
    }

    #[test]
    fn layer_norm_statistics() {
        let mut tape = Tape::new(true);
        // already zero-mean unit-var row
        let x = tape.leaf(t64(&[1, 2], &[1.0, -1.0]), false);
        let gain = tape.leaf(t64(&[2], &[1.0, 1.0]), false);
        let y = tape.layer_norm(x, gain, None, 1e-12).unwrap();
        let out = tape.value(y).data();
        assert!((out[0] - 1.0).abs() < 1e-6 && (out[1] + 1.0).abs() < 1e-6);

        // constant row collapses to zero
        let c = tape.leaf(t64(&[1, 4], &[3.5, 3.5, 3.5, 3.5]), false);
        let gain4 = tape.leaf(t64(&[4], &[1.0; 4]), false);
        let y = tape.layer_norm(c, gain4, None, 1e-5).unwrap();
        assert!(tape.value(y).data().iter().all(|v| v.abs() < 1e-9));
    }

    #[test]
    fn layer_norm_random_input_moments() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let d = 64;
        let rows = 16;
        let data: Vec<f64> = (0..rows * d).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let mut tape = Tape::new(true);
        let x = tape.leaf(Tensor::new(vec![rows, d], data), false);
        let gain = tape.leaf(Tensor::ones(vec![d]), false);
        let y = tape.layer_norm(x, gain, None, 1e-5).unwrap();
        for r in 0..rows {
            let row = &tape.value(y).data()[r * d..(r + 1) * d];
            let mean: f64 = row.iter().sum::<f64>() / d as f64;
            let var: f64 = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / d as f64;
            assert!(mean.abs() < 1e-6, "mean {mean}");
            assert!((var - 1.0).abs() < 1e-3, "var {var}");
        }
    }

    #[test]
    fn cross_entropy_uniform_is_log_v() {
        let v = 11usize;
        let mut tape: Tape<f64> = Tape::new(true);
        let logits = tape.leaf(Tensor::zeros(vec![3, v]), true);
        let loss = tape.cross_entropy(logits, &[0, 5, 10]).unwrap();
        let got = tape.value(loss).data()[0];
        assert!((got - (v as f64).ln()).abs() < 1e-12, "{got}");
    }

    #[test]
    fn gather_scatter_roundtrip_grads() {
        let mut tape = Tape::new(true);
        let src = tape.leaf(t64(&[4, 2], &[1., 2., 3., 4., 5., 6., 7., 8.]), true);
        let picked = tape.gather_rows(src, &[2, 0]).unwrap();
        assert_eq!(tape.value(picked).data(), &[5., 6., 1., 2.]);
        let loss = tape.sum_all(picked).unwrap();
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(src).unwrap(), &[1., 1., 0., 0., 1., 1., 0., 0.]);

        let mut tape = Tape::new(true);
        let base = tape.leaf(t64(&[3], &[1., 1., 1.]), true);
        let vals = tape.leaf(t64(&[2], &[5., 7.]), true);
        let out = tape.scatter_rows(base, &[0, 2], vals).unwrap();
        assert_eq!(tape.value(out).data(), &[5., 1., 7.]);
        let sq = tape.mul(out, out).unwrap();
        let loss = tape.sum_all(sq).unwrap();
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(vals).unwrap(), &[10., 14.]);
        assert_eq!(tape.grad(base).unwrap(), &[0., 2., 0.]);
    }

    #[test]
    fn scatter_rejects_duplicate_indices() {
        let mut tape: Tape<f64> = Tape::new(true);
        let base = tape.leaf(Tensor::ones(vec![3]), false);
        let vals = tape.leaf(Tensor::ones(vec![2]), false);
        assert!(tape.scatter_rows(base, &[1, 1], vals).is_err());
    }

    #[test]
    fn permute_and_concat_invert() {
        let mut tape = Tape::new(true);
        let a = tape.leaf(t64(&[2, 3], &[1., 2., 3., 4., 5., 6.]), true);
        let at = tape.permute(a, &[1, 0]).unwrap();
        assert_eq!(tape.value(at).shape(), &[3, 2]);
        assert_eq!(tape.value(at).data(), &[1., 4., 2., 5., 3., 6.]);

        let left = tape.slice(a, 1, 0, 2).unwrap();
        let right = tape.slice(a, 1, 2, 1).unwrap();
        let back = tape.concat(&[left, right], 1).unwrap();
        assert_eq!(tape.value(back).data(), tape.value(a).data());
        let loss = tape.sum_all(back).unwrap();
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(a).unwrap(), &[1.0; 6]);
    }

    #[test]
    fn broadcast_mul_matches_scalar_loops() {
        // exhaustive over small shapes
        let cases: Vec<(Vec<usize>, Vec<usize>)> = vec![
            (vec![2, 3], vec![3]),
            (vec![4, 1], vec![1, 3]),
            (vec![2, 1, 2], vec![2, 2]),
        ];
        for (sa, sb) in cases {
            let na: usize = sa.iter().product();
            let nb: usize = sb.iter().product();
            let da: Vec<f64> = (0..na).map(|i| i as f64 + 1.0).collect();
            let db: Vec<f64> = (0..nb).map(|i| (i as f64) * 0.5 - 1.0).collect();
            let mut tape = Tape::new(true);
            let a = tape.leaf(Tensor::new(sa.clone(), da.clone()), false);
            let b = tape.leaf(Tensor::new(sb.clone(), db.clone()), false);
            let ab = tape.mul(a, b).unwrap();
            let ba = tape.mul(b, a).unwrap();
            assert_eq!(tape.value(ab).data(), tape.value(ba).data());

            let out_shape = tape.value(ab).shape().to_vec();
            let stra = broadcast_strides(&sa, out_shape.len());
            let strb = broadcast_strides(&sb, out_shape.len());
            for flat in 0..tape.value(ab).numel() {
                let ea = da[project_index(flat, &out_shape, &stra)];
                let eb = db[project_index(flat, &out_shape, &strb)];
                assert_eq!(tape.value(ab).data()[flat], ea * eb);
            }
        }
    }

    #[test]
    fn non_finite_detected_when_checking() {
        let mut tape = Tape::new(true);
        let a = tape.leaf(t64(&[1], &[1e308]), false);
        let err = tape.mul(a, a).unwrap_err();
        assert!(matches!(err, TensorError::NonFinite { .. }));
    }

    #[test]
    fn backward_requires_scalar_loss() {
        let mut tape: Tape<f64> = Tape::new(true);
        let a = tape.leaf(Tensor::ones(vec![2]), true);
        assert!(tape.backward(a).is_err());
    }
}
