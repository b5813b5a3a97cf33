//! Per-forward-pass computation record.
//!
//! Every op appends one node holding its output value and the operand
//! references needed by its backward rule. Nodes are created in topological
//! order by construction; `backward` walks them in exact reverse creation
//! order and accumulates parameter gradients into the owning [`ParamStore`].
//! The tape is discarded after backward.

use super::params::{ParamId, ParamStore};
use super::special::{digamma, ln_gamma, trigamma};
use super::{
    broadcast_shape, broadcast_strides, reduce_grad_to_shape, Result, Tensor, TensorError,
};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TensorRef(usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinaryKind {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UnaryKind {
    Sigmoid,
    Tanh,
    Relu,
    Softplus,
    Exp,
    Log,
    Neg,
    LnGamma,
    Digamma,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReduceKind {
    Sum,
    Mean,
    Max,
}

enum Op {
    Leaf { param: Option<ParamId> },
    Matmul { a: usize, b: usize },
    Binary { kind: BinaryKind, a: usize, b: usize },
    Unary { kind: UnaryKind, a: usize },
    Reduce { kind: ReduceKind, a: usize, axis: Option<usize>, argmax: Vec<usize> },
    CumSum { a: usize, axis: usize },
    Concat { parts: Vec<usize>, axis: usize },
    Reshape { a: usize },
    Clamp { a: usize, lo: f64, hi: f64 },
    /// Forward thresholds the soft value at 0.5; backward passes the gradient
    /// through unchanged (straight-through estimator).
    HardStep { a: usize },
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
    grad: Option<Vec<f64>>,
}

/// Computation record for one forward pass.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Value produced at `r`.
    pub fn value(&self, r: TensorRef) -> &Tensor {
        &self.nodes[r.0].value
    }

    pub fn shape(&self, r: TensorRef) -> &[usize] {
        self.nodes[r.0].value.shape()
    }

    /// Gradient accumulated at `r` by the last `backward` call, if any.
    pub fn grad(&self, r: TensorRef) -> Option<&[f64]> {
        self.nodes[r.0].grad.as_deref()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> TensorRef {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            grad: None,
        });
        TensorRef(self.nodes.len() - 1)
    }

    fn check_finite(t: &Tensor, op: &'static str) -> Result<()> {
        if t.is_finite() {
            Ok(())
        } else {
            Err(TensorError::NonFinite { op })
        }
    }

    // ── Leaves ──────────────────────────────────────────────────────────

    /// Constant input; never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> TensorRef {
        self.push(value, Op::Leaf { param: None }, false)
    }

    pub fn scalar(&mut self, value: f64) -> TensorRef {
        self.constant(Tensor::scalar(value))
    }

    /// Bind a parameter from `store`; backward accumulates into its grad.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> TensorRef {
        self.push(
            store.get(id).value.clone(),
            Op::Leaf { param: Some(id) },
            true,
        )
    }

    // ── Forward ops ─────────────────────────────────────────────────────

    pub fn matmul(&mut self, a: TensorRef, b: TensorRef) -> Result<TensorRef> {
        let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        let (sa, sb) = (ta.shape(), tb.shape());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(TensorError::ShapeMismatch {
                op: "matmul",
                lhs: sa.to_vec(),
                rhs: sb.to_vec(),
            });
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, ta.data(), false, tb.data(), false, &mut out);
        let value = Tensor::from_vec(vec![m, n], out)?;
        Self::check_finite(&value, "matmul")?;
        let rg = self.nodes[a.0].requires_grad || self.nodes[b.0].requires_grad;
        Ok(self.push(value, Op::Matmul { a: a.0, b: b.0 }, rg))
    }

    pub fn binary(&mut self, kind: BinaryKind, a: TensorRef, b: TensorRef) -> Result<TensorRef> {
        let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        let out_shape = broadcast_shape(binary_name(kind), ta.shape(), tb.shape())?;
        let value = apply_binary(kind, ta, tb, &out_shape)?;
        Self::check_finite(&value, binary_name(kind))?;
        let rg = self.nodes[a.0].requires_grad || self.nodes[b.0].requires_grad;
        Ok(self.push(value, Op::Binary { kind, a: a.0, b: b.0 }, rg))
    }

    pub fn add(&mut self, a: TensorRef, b: TensorRef) -> Result<TensorRef> {
        self.binary(BinaryKind::Add, a, b)
    }
    pub fn sub(&mut self, a: TensorRef, b: TensorRef) -> Result<TensorRef> {
        self.binary(BinaryKind::Sub, a, b)
    }
    pub fn mul(&mut self, a: TensorRef, b: TensorRef) -> Result<TensorRef> {
        self.binary(BinaryKind::Mul, a, b)
    }
    pub fn div(&mut self, a: TensorRef, b: TensorRef) -> Result<TensorRef> {
        self.binary(BinaryKind::Div, a, b)
    }
    pub fn pow(&mut self, a: TensorRef, b: TensorRef) -> Result<TensorRef> {
        self.binary(BinaryKind::Pow, a, b)
    }

    pub fn unary(&mut self, kind: UnaryKind, a: TensorRef) -> Result<TensorRef> {
        let ta = &self.nodes[a.0].value;
        if kind == UnaryKind::Log {
            if let Some(v) = ta.data().iter().find(|v| **v <= 0.0) {
                return Err(TensorError::Domain {
                    op: "log",
                    detail: format!("input {v} is not strictly positive"),
                });
            }
        }
        if matches!(kind, UnaryKind::LnGamma | UnaryKind::Digamma) {
            if let Some(v) = ta.data().iter().find(|v| **v <= 0.0) {
                return Err(TensorError::Domain {
                    op: unary_name(kind),
                    detail: format!("input {v} is not strictly positive"),
                });
            }
        }
        let data: Vec<f64> = ta.data().iter().map(|&x| apply_unary(kind, x)).collect();
        let value = Tensor::from_vec(ta.shape().to_vec(), data)?;
        Self::check_finite(&value, unary_name(kind))?;
        let rg = self.nodes[a.0].requires_grad;
        Ok(self.push(value, Op::Unary { kind, a: a.0 }, rg))
    }

    pub fn sigmoid(&mut self, a: TensorRef) -> Result<TensorRef> {
        self.unary(UnaryKind::Sigmoid, a)
    }
    pub fn tanh(&mut self, a: TensorRef) -> Result<TensorRef> {
        self.unary(UnaryKind::Tanh, a)
    }
    pub fn relu(&mut self, a: TensorRef) -> Result<TensorRef> {
        self.unary(UnaryKind::Relu, a)
    }
    pub fn softplus(&mut self, a: TensorRef) -> Result<TensorRef> {
        self.unary(UnaryKind::Softplus, a)
    }
    pub fn exp(&mut self, a: TensorRef) -> Result<TensorRef> {
        self.unary(UnaryKind::Exp, a)
    }
    pub fn log(&mut self, a: TensorRef) -> Result<TensorRef> {
        self.unary(UnaryKind::Log, a)
    }
    pub fn neg(&mut self, a: TensorRef) -> Result<TensorRef> {
        self.unary(UnaryKind::Neg, a)
    }
    pub fn ln_gamma(&mut self, a: TensorRef) -> Result<TensorRef> {
        self.unary(UnaryKind::LnGamma, a)
    }
    pub fn digamma(&mut self, a: TensorRef) -> Result<TensorRef> {
        self.unary(UnaryKind::Digamma, a)
    }

    pub fn reduce(
        &mut self,
        kind: ReduceKind,
        a: TensorRef,
        axis: Option<usize>,
    ) -> Result<TensorRef> {
        let ta = &self.nodes[a.0].value;
        let shape = ta.shape().to_vec();
        if let Some(ax) = axis {
            if ax >= shape.len() {
                return Err(TensorError::InvalidAxis { axis: ax, shape });
            }
        }
        let (out_shape, pre, len, post) = reduce_geometry(&shape, axis);
        let mut out = vec![0.0; pre * post];
        let mut argmax = Vec::new();
        let data = ta.data();
        match kind {
            ReduceKind::Sum | ReduceKind::Mean => {
                for p in 0..pre {
                    for q in 0..post {
                        let mut s = 0.0;
                        for l in 0..len {
                            s += data[(p * len + l) * post + q];
                        }
                        out[p * post + q] = s;
                    }
                }
                if kind == ReduceKind::Mean {
                    let inv = 1.0 / len as f64;
                    for v in &mut out {
                        *v *= inv;
                    }
                }
            }
            ReduceKind::Max => {
                argmax = vec![0usize; pre * post];
                for p in 0..pre {
                    for q in 0..post {
                        let mut best = f64::NEG_INFINITY;
                        let mut best_l = 0usize;
                        for l in 0..len {
                            let v = data[(p * len + l) * post + q];
                            // strict > keeps the lowest index on ties
                            if v > best {
                                best = v;
                                best_l = l;
                            }
                        }
                        out[p * post + q] = best;
                        argmax[p * post + q] = (p * len + best_l) * post + q;
                    }
                }
            }
        }
        let value = Tensor::from_vec(out_shape, out)?;
        Self::check_finite(&value, "reduce")?;
        let rg = self.nodes[a.0].requires_grad;
        Ok(self.push(value, Op::Reduce { kind, a: a.0, axis, argmax }, rg))
    }

    pub fn sum(&mut self, a: TensorRef, axis: Option<usize>) -> Result<TensorRef> {
        self.reduce(ReduceKind::Sum, a, axis)
    }
    pub fn mean(&mut self, a: TensorRef, axis: Option<usize>) -> Result<TensorRef> {
        self.reduce(ReduceKind::Mean, a, axis)
    }
    pub fn max(&mut self, a: TensorRef, axis: Option<usize>) -> Result<TensorRef> {
        self.reduce(ReduceKind::Max, a, axis)
    }

    /// Cumulative sum along `axis`.
    pub fn cumsum(&mut self, a: TensorRef, axis: usize) -> Result<TensorRef> {
        let ta = &self.nodes[a.0].value;
        let shape = ta.shape().to_vec();
        if axis >= shape.len() {
            return Err(TensorError::InvalidAxis { axis, shape });
        }
        let (_, pre, len, post) = reduce_geometry(&shape, Some(axis));
        let data = ta.data();
        let mut out = vec![0.0; data.len()];
        for p in 0..pre {
            for q in 0..post {
                let mut s = 0.0;
                for l in 0..len {
                    let idx = (p * len + l) * post + q;
                    s += data[idx];
                    out[idx] = s;
                }
            }
        }
        let value = Tensor::from_vec(shape, out)?;
        Self::check_finite(&value, "cumsum")?;
        let rg = self.nodes[a.0].requires_grad;
        Ok(self.push(value, Op::CumSum { a: a.0, axis }, rg))
    }

    /// Concatenate along `axis`; all other dimensions must agree.
    pub fn concat(&mut self, parts: &[TensorRef], axis: usize) -> Result<TensorRef> {
        assert!(!parts.is_empty(), "concat of zero tensors");
        let first_shape = self.nodes[parts[0].0].value.shape().to_vec();
        if axis >= first_shape.len() {
            return Err(TensorError::InvalidAxis { axis, shape: first_shape });
        }
        let mut out_shape = first_shape.clone();
        out_shape[axis] = 0;
        for r in parts {
            let s = self.nodes[r.0].value.shape();
            if s.len() != first_shape.len()
                || s.iter()
                    .enumerate()
                    .any(|(d, &v)| d != axis && v != first_shape[d])
            {
                return Err(TensorError::ShapeMismatch {
                    op: "concat",
                    lhs: first_shape,
                    rhs: s.to_vec(),
                });
            }
            out_shape[axis] += s[axis];
        }
        let (_, pre, _, post) = reduce_geometry(&out_shape, Some(axis));
        let total_axis = out_shape[axis];
        let mut out = vec![0.0; pre * total_axis * post];
        let mut offset = 0usize;
        for r in parts {
            let t = &self.nodes[r.0].value;
            let la = t.shape()[axis];
            let data = t.data();
            for p in 0..pre {
                for l in 0..la {
                    let src = (p * la + l) * post;
                    let dst = (p * total_axis + offset + l) * post;
                    out[dst..dst + post].copy_from_slice(&data[src..src + post]);
                }
            }
            offset += la;
        }
        let value = Tensor::from_vec(out_shape, out)?;
        let rg = parts.iter().any(|r| self.nodes[r.0].requires_grad);
        Ok(self.push(
            value,
            Op::Concat {
                parts: parts.iter().map(|r| r.0).collect(),
                axis,
            },
            rg,
        ))
    }

    pub fn reshape(&mut self, a: TensorRef, shape: &[usize]) -> Result<TensorRef> {
        let ta = &self.nodes[a.0].value;
        let expected: usize = shape.iter().product();
        if expected != ta.numel() {
            return Err(TensorError::DataLength {
                shape: shape.to_vec(),
                expected,
                got: ta.numel(),
            });
        }
        let value = Tensor::from_vec(shape.to_vec(), ta.data().to_vec())?;
        let rg = self.nodes[a.0].requires_grad;
        Ok(self.push(value, Op::Reshape { a: a.0 }, rg))
    }

    /// Clamp into `[lo, hi]`; gradient is passed only where the input lies
    /// strictly inside the interval.
    pub fn clamp(&mut self, a: TensorRef, lo: f64, hi: f64) -> Result<TensorRef> {
        let ta = &self.nodes[a.0].value;
        let data: Vec<f64> = ta.data().iter().map(|&x| x.clamp(lo, hi)).collect();
        let value = Tensor::from_vec(ta.shape().to_vec(), data)?;
        let rg = self.nodes[a.0].requires_grad;
        Ok(self.push(value, Op::Clamp { a: a.0, lo, hi }, rg))
    }

    /// Threshold at 0.5 into {0,1} with a straight-through backward.
    pub fn hard_step(&mut self, a: TensorRef) -> Result<TensorRef> {
        let ta = &self.nodes[a.0].value;
        let data: Vec<f64> = ta
            .data()
            .iter()
            .map(|&x| if x > 0.5 { 1.0 } else { 0.0 })
            .collect();
        let value = Tensor::from_vec(ta.shape().to_vec(), data)?;
        let rg = self.nodes[a.0].requires_grad;
        Ok(self.push(value, Op::HardStep { a: a.0 }, rg))
    }

    // ── Conveniences built from the primitive ops ───────────────────────

    /// `x W + b` for `x: [n×i]`, `w: [i×o]`, `b: [o]`.
    pub fn affine(&mut self, x: TensorRef, w: TensorRef, b: TensorRef) -> Result<TensorRef> {
        let xw = self.matmul(x, w)?;
        self.add(xw, b)
    }

    /// Multiply by a scalar constant.
    pub fn scale(&mut self, a: TensorRef, c: f64) -> Result<TensorRef> {
        let s = self.scalar(c);
        self.mul(a, s)
    }

    /// Add a scalar constant.
    pub fn shift(&mut self, a: TensorRef, c: f64) -> Result<TensorRef> {
        let s = self.scalar(c);
        self.add(a, s)
    }

    /// Numerically stable log-sum-exp over `axis`, keeping the reduced axis
    /// as size 1 so the result broadcasts back against the input.
    pub fn logsumexp_keepdim(&mut self, a: TensorRef, axis: usize) -> Result<TensorRef> {
        let shape = self.shape(a).to_vec();
        let mut keep = shape.clone();
        keep[axis] = 1;
        let m = self.max(a, Some(axis))?;
        let m = self.reshape(m, &keep)?;
        let centered = self.sub(a, m)?;
        let e = self.exp(centered)?;
        let s = self.sum(e, Some(axis))?;
        let s = self.reshape(s, &keep)?;
        let l = self.log(s)?;
        self.add(l, m)
    }

    // ── Backward ────────────────────────────────────────────────────────

    /// Reverse pass from a scalar `loss`. Gradients of parameter leaves are
    /// accumulated into `store`; repeated calls without zeroing accumulate.
    pub fn backward(&mut self, loss: TensorRef, store: &mut ParamStore) -> Result<()> {
        if !self.nodes[loss.0].value.shape().is_empty() {
            return Err(TensorError::NonScalarLoss {
                shape: self.nodes[loss.0].value.shape().to_vec(),
            });
        }
        for node in &mut self.nodes {
            node.grad = None;
        }
        self.nodes[loss.0].grad = Some(vec![1.0]);

        for i in (0..self.nodes.len()).rev() {
            if self.nodes[i].grad.is_none() || !self.nodes[i].requires_grad {
                continue;
            }
            let grad = self.nodes[i].grad.take().unwrap();
            self.propagate(i, &grad, store);
            self.nodes[i].grad = Some(grad);
        }
        Ok(())
    }

    fn operand_needs_grad(&self, idx: usize) -> bool {
        self.nodes[idx].requires_grad
    }

    fn add_grad(&mut self, idx: usize, delta: &[f64]) {
        let n = self.nodes[idx].value.numel();
        let g = self.nodes[idx].grad.get_or_insert_with(|| vec![0.0; n]);
        for (gi, di) in g.iter_mut().zip(delta) {
            *gi += di;
        }
    }

    fn propagate(&mut self, i: usize, grad: &[f64], store: &mut ParamStore) {
        // Take the op apart first so we can borrow node values immutably.
        match &self.nodes[i].op {
            Op::Leaf { param } => {
                if let Some(id) = *param {
                    store.accumulate_grad(id, grad);
                }
            }
            Op::Matmul { a, b } => {
                let (a, b) = (*a, *b);
                let sa = self.nodes[a].value.shape();
                let sb = self.nodes[b].value.shape();
                let (m, k, n) = (sa[0], sa[1], sb[1]);
                if self.operand_needs_grad(a) {
                    // dA = G · Bᵀ
                    let mut da = vec![0.0; m * k];
                    gemm(m, n, k, grad, false, self.nodes[b].value.data(), true, &mut da);
                    self.add_grad(a, &da);
                }
                if self.operand_needs_grad(b) {
                    // dB = Aᵀ · G
                    let mut db = vec![0.0; k * n];
                    gemm(k, m, n, self.nodes[a].value.data(), true, grad, false, &mut db);
                    self.add_grad(b, &db);
                }
            }
            Op::Binary { kind, a, b } => {
                let (kind, a, b) = (*kind, *a, *b);
                let out_shape = self.nodes[i].value.shape().to_vec();
                let (da, db) = binary_backward(
                    kind,
                    &self.nodes[a].value,
                    &self.nodes[b].value,
                    grad,
                    &out_shape,
                    self.operand_needs_grad(a),
                    self.operand_needs_grad(b),
                );
                if let Some(da) = da {
                    let r = reduce_grad_to_shape(&da, &out_shape, self.nodes[a].value.shape());
                    self.add_grad(a, &r);
                }
                if let Some(db) = db {
                    let r = reduce_grad_to_shape(&db, &out_shape, self.nodes[b].value.shape());
                    self.add_grad(b, &r);
                }
            }
            Op::Unary { kind, a } => {
                let (kind, a) = (*kind, *a);
                if !self.operand_needs_grad(a) {
                    return;
                }
                let x = self.nodes[a].value.data();
                let y = self.nodes[i].value.data();
                let da: Vec<f64> = grad
                    .iter()
                    .zip(x.iter().zip(y))
                    .map(|(&g, (&x, &y))| g * unary_derivative(kind, x, y))
                    .collect();
                self.add_grad(a, &da);
            }
            Op::Reduce { kind, a, axis, argmax } => {
                let (kind, a, axis) = (*kind, *a, *axis);
                if !self.operand_needs_grad(a) {
                    return;
                }
                let in_shape = self.nodes[a].value.shape().to_vec();
                let (_, pre, len, post) = reduce_geometry(&in_shape, axis);
                let mut da = vec![0.0; self.nodes[a].value.numel()];
                match kind {
                    ReduceKind::Sum | ReduceKind::Mean => {
                        let scale = if kind == ReduceKind::Mean {
                            1.0 / len as f64
                        } else {
                            1.0
                        };
                        for p in 0..pre {
                            for q in 0..post {
                                let g = grad[p * post + q] * scale;
                                for l in 0..len {
                                    da[(p * len + l) * post + q] += g;
                                }
                            }
                        }
                    }
                    ReduceKind::Max => {
                        for (out_idx, &src) in argmax.iter().enumerate() {
                            da[src] += grad[out_idx];
                        }
                    }
                }
                self.add_grad(a, &da);
            }
            Op::CumSum { a, axis } => {
                let (a, axis) = (*a, *axis);
                if !self.operand_needs_grad(a) {
                    return;
                }
                let shape = self.nodes[a].value.shape().to_vec();
                let (_, pre, len, post) = reduce_geometry(&shape, Some(axis));
                let mut da = vec![0.0; self.nodes[a].value.numel()];
                for p in 0..pre {
                    for q in 0..post {
                        // d(cumsum)/dx_l collects grads of every position >= l
                        let mut s = 0.0;
                        for l in (0..len).rev() {
                            let idx = (p * len + l) * post + q;
                            s += grad[idx];
                            da[idx] = s;
                        }
                    }
                }
                self.add_grad(a, &da);
            }
            Op::Concat { parts, axis } => {
                let parts = parts.clone();
                let axis = *axis;
                let out_shape = self.nodes[i].value.shape().to_vec();
                let (_, pre, total_axis, post) = {
                    let (o, p, l, q) = reduce_geometry(&out_shape, Some(axis));
                    (o, p, l, q)
                };
                let _ = total_axis;
                let mut offset = 0usize;
                for part in parts {
                    let la = self.nodes[part].value.shape()[axis];
                    if self.operand_needs_grad(part) {
                        let mut dp = vec![0.0; self.nodes[part].value.numel()];
                        for p in 0..pre {
                            for l in 0..la {
                                let src = (p * out_shape[axis] + offset + l) * post;
                                let dst = (p * la + l) * post;
                                dp[dst..dst + post].copy_from_slice(&grad[src..src + post]);
                            }
                        }
                        self.add_grad(part, &dp);
                    }
                    offset += la;
                }
            }
            Op::Reshape { a } => {
                let a = *a;
                if self.operand_needs_grad(a) {
                    self.add_grad(a, grad);
                }
            }
            Op::Clamp { a, lo, hi } => {
                let (a, lo, hi) = (*a, *lo, *hi);
                if !self.operand_needs_grad(a) {
                    return;
                }
                let x = self.nodes[a].value.data();
                let da: Vec<f64> = grad
                    .iter()
                    .zip(x)
                    .map(|(&g, &x)| if x > lo && x < hi { g } else { 0.0 })
                    .collect();
                self.add_grad(a, &da);
            }
            Op::HardStep { a } => {
                let a = *a;
                if self.operand_needs_grad(a) {
                    self.add_grad(a, grad);
                }
            }
        }
    }
}

/// `(out_shape, pre, len, post)` for reducing `shape` over `axis`
/// (`axis = None` treats the whole tensor as one axis).
fn reduce_geometry(shape: &[usize], axis: Option<usize>) -> (Vec<usize>, usize, usize, usize) {
    match axis {
        None => {
            let len: usize = shape.iter().product();
            (vec![], 1, len, 1)
        }
        Some(ax) => {
            let pre: usize = shape[..ax].iter().product();
            let len = shape[ax];
            let post: usize = shape[ax + 1..].iter().product();
            let mut out = shape.to_vec();
            out.remove(ax);
            (out, pre, len, post)
        }
    }
}

fn binary_name(kind: BinaryKind) -> &'static str {
    match kind {
        BinaryKind::Add => "add",
        BinaryKind::Sub => "sub",
        BinaryKind::Mul => "mul",
        BinaryKind::Div => "div",
        BinaryKind::Pow => "pow",
    }
}

fn unary_name(kind: UnaryKind) -> &'static str {
    match kind {
        UnaryKind::Sigmoid => "sigmoid",
        UnaryKind::Tanh => "tanh",
        UnaryKind::Relu => "relu",
        UnaryKind::Softplus => "softplus",
        UnaryKind::Exp => "exp",
        UnaryKind::Log => "log",
        UnaryKind::Neg => "neg",
        UnaryKind::LnGamma => "ln_gamma",
        UnaryKind::Digamma => "digamma",
    }
}

fn binary_eval(kind: BinaryKind, x: f64, y: f64) -> f64 {
    match kind {
        BinaryKind::Add => x + y,
        BinaryKind::Sub => x - y,
        BinaryKind::Mul => x * y,
        BinaryKind::Div => x / y,
        BinaryKind::Pow => x.powf(y),
    }
}

/// Partial derivatives (∂/∂x, ∂/∂y) of a binary op at (x, y) with output z.
fn binary_partials(kind: BinaryKind, x: f64, y: f64, z: f64) -> (f64, f64) {
    match kind {
        BinaryKind::Add => (1.0, 1.0),
        BinaryKind::Sub => (1.0, -1.0),
        BinaryKind::Mul => (y, x),
        BinaryKind::Div => (1.0 / y, -x / (y * y)),
        BinaryKind::Pow => (y * x.powf(y - 1.0), if x > 0.0 { z * x.ln() } else { 0.0 }),
    }
}

fn apply_binary(kind: BinaryKind, a: &Tensor, b: &Tensor, out_shape: &[usize]) -> Result<Tensor> {
    let numel: usize = out_shape.iter().product();
    let mut out = vec![0.0; numel];
    if a.shape() == b.shape() {
        for ((o, &x), &y) in out.iter_mut().zip(a.data()).zip(b.data()) {
            *o = binary_eval(kind, x, y);
        }
    } else if b.numel() == 1 {
        let y = b.data()[0];
        for (o, &x) in out.iter_mut().zip(a.data()) {
            *o = binary_eval(kind, x, y);
        }
    } else if a.numel() == 1 {
        let x = a.data()[0];
        for (o, &y) in out.iter_mut().zip(b.data()) {
            *o = binary_eval(kind, x, y);
        }
    } else if is_row_broadcast(a.shape(), b.shape()) {
        let (rows, cols) = (out_shape[0], out_shape[1]);
        let (ad, bd) = (a.data(), b.data());
        for r in 0..rows {
            let arow = &ad[r * cols..(r + 1) * cols];
            let orow = &mut out[r * cols..(r + 1) * cols];
            for c in 0..cols {
                orow[c] = binary_eval(kind, arow[c], bd[c]);
            }
        }
    } else {
        // general strided broadcast
        let sa = broadcast_strides(a.shape(), out_shape);
        let sb = broadcast_strides(b.shape(), out_shape);
        let nd = out_shape.len();
        let (ad, bd) = (a.data(), b.data());
        let mut coords = vec![0usize; nd];
        for (flat, o) in out.iter_mut().enumerate() {
            let mut rem = flat;
            let (mut ia, mut ib) = (0usize, 0usize);
            for d in (0..nd).rev() {
                coords[d] = rem % out_shape[d];
                rem /= out_shape[d];
            }
            for d in 0..nd {
                ia += coords[d] * sa[d];
                ib += coords[d] * sb[d];
            }
            *o = binary_eval(kind, ad[ia], bd[ib]);
        }
    }
    Tensor::from_vec(out_shape.to_vec(), out)
}

fn is_row_broadcast(a: &[usize], b: &[usize]) -> bool {
    a.len() == 2 && b.len() == 1 && b[0] == a[1]
}

/// Gradients of a binary op in the (broadcast) output layout. Reduction to
/// operand shapes happens at the caller.
fn binary_backward(
    kind: BinaryKind,
    a: &Tensor,
    b: &Tensor,
    grad: &[f64],
    out_shape: &[usize],
    need_a: bool,
    need_b: bool,
) -> (Option<Vec<f64>>, Option<Vec<f64>>) {
    let numel = grad.len();
    let mut da = if need_a { Some(vec![0.0; numel]) } else { None };
    let mut db = if need_b { Some(vec![0.0; numel]) } else { None };
    let sa = broadcast_strides(a.shape(), out_shape);
    let sb = broadcast_strides(b.shape(), out_shape);
    let same = a.shape() == b.shape();
    let nd = out_shape.len();
    let (ad, bd) = (a.data(), b.data());
    let mut coords = vec![0usize; nd];
    for (flat, &g) in grad.iter().enumerate() {
        let (ia, ib) = if same {
            (flat, flat)
        } else if bd.len() == 1 {
            (flat, 0)
        } else if ad.len() == 1 {
            (0, flat)
        } else {
            let mut rem = flat;
            for d in (0..nd).rev() {
                coords[d] = rem % out_shape[d];
                rem /= out_shape[d];
            }
            let (mut ia, mut ib) = (0usize, 0usize);
            for d in 0..nd {
                ia += coords[d] * sa[d];
                ib += coords[d] * sb[d];
            }
            (ia, ib)
        };
        let (x, y) = (ad[ia], bd[ib]);
        let z = binary_eval(kind, x, y);
        let (px, py) = binary_partials(kind, x, y, z);
        if let Some(da) = da.as_mut() {
            da[flat] = g * px;
        }
        if let Some(db) = db.as_mut() {
            db[flat] = g * py;
        }
    }
    (da, db)
}

fn apply_unary(kind: UnaryKind, x: f64) -> f64 {
    match kind {
        UnaryKind::Sigmoid => stable_sigmoid(x),
        UnaryKind::Tanh => x.tanh(),
        UnaryKind::Relu => x.max(0.0),
        UnaryKind::Softplus => stable_softplus(x),
        UnaryKind::Exp => x.exp(),
        UnaryKind::Log => x.ln(),
        UnaryKind::Neg => -x,
        UnaryKind::LnGamma => ln_gamma(x),
        UnaryKind::Digamma => digamma(x),
    }
}

/// d out / d x given input `x` and stored output `y`.
fn unary_derivative(kind: UnaryKind, x: f64, y: f64) -> f64 {
    match kind {
        UnaryKind::Sigmoid => y * (1.0 - y),
        UnaryKind::Tanh => 1.0 - y * y,
        UnaryKind::Relu => {
            if x > 0.0 {
                1.0
            } else {
                0.0
            }
        }
        UnaryKind::Softplus => stable_sigmoid(x),
        UnaryKind::Exp => y,
        UnaryKind::Log => 1.0 / x,
        UnaryKind::Neg => -1.0,
        UnaryKind::LnGamma => digamma(x),
        UnaryKind::Digamma => trigamma(x),
    }
}

pub(crate) fn stable_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn stable_softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// C += op(A)·op(B) on row-major buffers, where `ta`/`tb` transpose.
fn gemm(m: usize, k: usize, n: usize, a: &[f64], ta: bool, b: &[f64], tb: bool, c: &mut [f64]) {
    let (rsa, csa) = if ta { (1isize, m as isize) } else { (k as isize, 1isize) };
    let (rsb, csb) = if tb { (1isize, k as isize) } else { (n as isize, 1isize) };
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            1.0,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}
