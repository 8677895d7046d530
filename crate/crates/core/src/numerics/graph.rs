//! Reverse-mode differentiation over a recorded tape.
//!
//! Every op appends a node holding its forward value. [`Graph::backward`]
//! walks the tape in reverse and accumulates gradients only into nodes that
//! transitively depend on a parameter leaf, so frozen weights and constant
//! inputs never receive (or cost) a gradient.

use std::borrow::Cow;

use super::ops::{self, require_rank};
use super::{NumericsError, Scalar, Tensor};

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Backward rule for [`Graph::custom`]: `(inputs, output, grad_output) -> grad per input`.
pub type CustomBackward<T> = Box<dyn Fn(&[&Tensor<T>], &Tensor<T>, &Tensor<T>) -> Vec<Tensor<T>> + Send + Sync>;

enum Op<T: Scalar> {
    Leaf,
    MatMul { a: Var, b: Var, transpose_b: bool },
    Add(Var, Var),
    AddBias { x: Var, bias: Var },
    Mul(Var, Var),
    Scale(Var, T),
    Sum(Var),
    Silu(Var),
    Sigmoid(Var),
    Softmax { x: Var, axis: usize },
    CausalSoftmax(Var),
    RmsNorm { x: Var, gain: Var, inv: Vec<T> },
    SliceCols { x: Var, start: usize },
    ConcatCols(Vec<Var>),
    SelectRow { x: Var, row: usize },
    CrossEntropy { logits: Var, target: usize },
    BceWithLogits { logits: Var, targets: Vec<T> },
    Custom { inputs: Vec<Var>, backward: CustomBackward<T> },
}

struct Node<'a, T: Scalar> {
    value: Cow<'a, Tensor<T>>,
    op: Op<T>,
    requires_grad: bool,
}

/// Computation tape. Borrowed leaves let model weights enter without copies.
pub struct Graph<'a, T: Scalar = f32> {
    nodes: Vec<Node<'a, T>>,
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Default for Graph<'_, T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<'a, T: Scalar> Graph<'a, T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new(), grads: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Cow<'a, Tensor<T>>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    fn push_owned(&mut self, value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Var {
        let rg = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.push(Cow::Owned(value), op, rg)
    }

    /// Input that never receives a gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(Cow::Owned(value), Op::Leaf, false)
    }

    pub fn constant_ref(&mut self, value: &'a Tensor<T>) -> Var {
        self.push(Cow::Borrowed(value), Op::Leaf, false)
    }

    /// Leaf whose gradient is tracked.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.push(Cow::Owned(value), Op::Leaf, true)
    }

    pub fn param_ref(&mut self, value: &'a Tensor<T>) -> Var {
        self.push(Cow::Borrowed(value), Op::Leaf, true)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Gradient of the last `backward` target with respect to `v`.
    pub fn grad(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take_grad(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }

    fn shape_err(&self, op: &'static str, a: Var, b: Var) -> NumericsError {
        NumericsError::ShapeMismatch { op, lhs: self.value(a).dims().to_vec(), rhs: self.value(b).dims().to_vec() }
    }

    /// `a[m×k] · b[k×n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        let out = ops::matmul_forward(self.value(a), self.value(b), false)?;
        Ok(self.push_owned(out, Op::MatMul { a, b, transpose_b: false }, &[a, b]))
    }

    /// `a[m×k] · b[n×k]ᵀ`, the linear-layer form with row-major weights.
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        let out = ops::matmul_forward(self.value(a), self.value(b), true)?;
        Ok(self.push_owned(out, Op::MatMul { a, b, transpose_b: true }, &[a, b]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        let out = self.value(a).add(self.value(b)).map_err(|_| self.shape_err("add", a, b))?;
        Ok(self.push_owned(out, Op::Add(a, b), &[a, b]))
    }

    /// Adds a vector of length `last_dim` to every row.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var, NumericsError> {
        let (xv, bv) = (self.value(x), self.value(bias));
        if bv.numel() != xv.last_dim() {
            return Err(self.shape_err("add_bias", x, bias));
        }
        let n = xv.last_dim();
        let mut out = xv.clone();
        for (i, o) in out.data_mut().iter_mut().enumerate() {
            *o = *o + bv.data()[i % n];
        }
        Ok(self.push_owned(out, Op::AddBias { x, bias }, &[x, bias]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.dims() != bv.dims() {
            return Err(self.shape_err("mul", a, b));
        }
        let data = av.data().iter().zip(bv.data()).map(|(&x, &y)| x * y).collect();
        let out = Tensor::new(av.dims().to_vec(), data)?;
        Ok(self.push_owned(out, Op::Mul(a, b), &[a, b]))
    }

    pub fn scale(&mut self, a: Var, c: T) -> Var {
        let out = self.value(a).scale(c);
        self.push_owned(out, Op::Scale(a, c), &[a])
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().copied().sum();
        self.push_owned(Tensor::scalar(s), Op::Sum(a), &[a])
    }

    pub fn silu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| x * ops::sigmoid(x));
        self.push_owned(out, Op::Silu(a), &[a])
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).map(ops::sigmoid);
        self.push_owned(out, Op::Sigmoid(a), &[a])
    }

    /// Max-subtracted softmax along `axis`.
    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var, NumericsError> {
        let xv = self.value(x);
        if axis >= xv.ndim() {
            return Err(NumericsError::InvalidAxis { axis, ndim: xv.ndim() });
        }
        let out = ops::softmax_forward(xv, axis);
        Ok(self.push_owned(out, Op::Softmax { x, axis }, &[x]))
    }

    /// Row softmax over a square score matrix with future positions masked to 0.
    pub fn causal_softmax(&mut self, x: Var) -> Result<Var, NumericsError> {
        let xv = self.value(x);
        require_rank("causal_softmax", xv, 2)?;
        if xv.dims()[0] != xv.dims()[1] {
            return Err(self.shape_err("causal_softmax", x, x));
        }
        let out = ops::causal_softmax_forward(xv);
        Ok(self.push_owned(out, Op::CausalSoftmax(x), &[x]))
    }

    /// `gain ⊙ x / sqrt(mean(x²) + eps)` over the last axis.
    pub fn rms_norm(&mut self, x: Var, gain: Var, eps: T) -> Result<Var, NumericsError> {
        let (xv, gv) = (self.value(x), self.value(gain));
        if gv.numel() != xv.last_dim() {
            return Err(self.shape_err("rms_norm", x, gain));
        }
        if eps <= T::zero() {
            return Err(NumericsError::InvalidArgument("rms_norm eps must be positive"));
        }
        let inv = ops::rms_inverse(xv, eps);
        let n = xv.last_dim();
        let mut out = xv.clone();
        for (i, o) in out.data_mut().iter_mut().enumerate() {
            *o = *o * inv[i / n] * gv.data()[i % n];
        }
        Ok(self.push_owned(out, Op::RmsNorm { x, gain, inv }, &[x, gain]))
    }

    /// Columns `start..start+len` of a matrix.
    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var, NumericsError> {
        let xv = self.value(x);
        require_rank("slice_cols", xv, 2)?;
        let (rows, cols) = (xv.dims()[0], xv.dims()[1]);
        if len == 0 || start + len > cols {
            return Err(NumericsError::IndexOutOfRange { op: "slice_cols", index: start + len, bound: cols });
        }
        let mut data = Vec::with_capacity(rows * len);
        for r in 0..rows {
            data.extend_from_slice(&xv.row(r)[start..start + len]);
        }
        let out = Tensor::new(vec![rows, len], data)?;
        Ok(self.push_owned(out, Op::SliceCols { x, start }, &[x]))
    }

    /// Horizontal concatenation of matrices with equal row counts.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var, NumericsError> {
        let first = *parts.first().ok_or(NumericsError::InvalidArgument("concat_cols needs at least one input"))?;
        for &p in parts {
            require_rank("concat_cols", self.value(p), 2)?;
            if self.value(p).dims()[0] != self.value(first).dims()[0] {
                return Err(self.shape_err("concat_cols", first, p));
            }
        }
        let rows = self.value(first).dims()[0];
        let total: usize = parts.iter().map(|&p| self.value(p).dims()[1]).sum();
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(r));
            }
        }
        let out = Tensor::new(vec![rows, total], data)?;
        Ok(self.push_owned(out, Op::ConcatCols(parts.to_vec()), parts))
    }

    /// Row `row` of a matrix as a `1×n` matrix.
    pub fn select_row(&mut self, x: Var, row: usize) -> Result<Var, NumericsError> {
        let xv = self.value(x);
        require_rank("select_row", xv, 2)?;
        if row >= xv.dims()[0] {
            return Err(NumericsError::IndexOutOfRange { op: "select_row", index: row, bound: xv.dims()[0] });
        }
        let out = Tensor::new(vec![1, xv.dims()[1]], xv.row(row).to_vec())?;
        Ok(self.push_owned(out, Op::SelectRow { x, row }, &[x]))
    }

    /// `−log softmax(logits)[target]` via log-sum-exp.
    pub fn cross_entropy(&mut self, logits: Var, target: usize) -> Result<Var, NumericsError> {
        let lv = self.value(logits);
        if target >= lv.numel() {
            return Err(NumericsError::IndexOutOfRange { op: "cross_entropy", index: target, bound: lv.numel() });
        }
        let loss = ops::log_sum_exp(lv.data()) - lv.data()[target];
        Ok(self.push_owned(Tensor::scalar(loss), Op::CrossEntropy { logits, target }, &[logits]))
    }

    /// Mean binary cross-entropy over all logits; `targets` must be 0 or 1.
    pub fn bce_with_logits(&mut self, logits: Var, targets: &[T]) -> Result<Var, NumericsError> {
        let lv = self.value(logits);
        if targets.len() != lv.numel() {
            return Err(NumericsError::ShapeMismatch {
                op: "bce_with_logits",
                lhs: lv.dims().to_vec(),
                rhs: vec![targets.len()],
            });
        }
        if let Some((index, &t)) = targets.iter().enumerate().find(|(_, &t)| t != T::zero() && t != T::one()) {
            return Err(NumericsError::NonBinaryTarget { index, value: t.as_f64() });
        }
        let c = T::lit(targets.len() as f64);
        let loss = lv.data().iter().zip(targets).map(|(&x, &t)| ops::bce_term(x, t)).sum::<T>() / c;
        Ok(self.push_owned(Tensor::scalar(loss), Op::BceWithLogits { logits, targets: targets.to_vec() }, &[logits]))
    }

    /// Records an op with a caller-supplied value and backward rule.
    pub fn custom(&mut self, inputs: &[Var], value: Tensor<T>, backward: CustomBackward<T>) -> Var {
        self.push_owned(value, Op::Custom { inputs: inputs.to_vec(), backward }, inputs)
    }

    /// Reverse pass from a single-element `loss`. Previous gradients are cleared.
    pub fn backward(&mut self, loss: Var) -> Result<(), NumericsError> {
        if self.value(loss).numel() != 1 {
            return Err(NumericsError::InvalidArgument("backward target must be a scalar"));
        }
        self.grads = (0..self.nodes.len()).map(|_| None).collect();
        if !self.nodes[loss.0].requires_grad {
            return Ok(());
        }
        self.grads[loss.0] = Some(Tensor::full(self.value(loss).dims(), T::one()));
        for i in (0..=loss.0).rev() {
            let Some(g) = self.grads[i].take() else {
                continue;
            };
            backprop_node(&self.nodes, &mut self.grads, i, &g);
            self.grads[i] = Some(g);
        }
        Ok(())
    }
}

fn grad_buf<'g, T: Scalar>(nodes: &[Node<'_, T>], grads: &'g mut [Option<Tensor<T>>], v: Var) -> Option<&'g mut [T]> {
    if !nodes[v.0].requires_grad {
        return None;
    }
    let dims = nodes[v.0].value.dims();
    Some(grads[v.0].get_or_insert_with(|| Tensor::zeros(dims)).data_mut())
}

fn accumulate<T: Scalar>(nodes: &[Node<'_, T>], grads: &mut [Option<Tensor<T>>], v: Var, delta: impl Fn(usize) -> T) {
    if let Some(buf) = grad_buf(nodes, grads, v) {
        for (i, b) in buf.iter_mut().enumerate() {
            *b = *b + delta(i);
        }
    }
}

fn backprop_node<T: Scalar>(nodes: &[Node<'_, T>], grads: &mut [Option<Tensor<T>>], i: usize, g: &Tensor<T>) {
    let gd = g.data();
    match &nodes[i].op {
        Op::Leaf => {}
        &Op::MatMul { a, b, transpose_b } => {
            let av = &*nodes[a.0].value;
            let bv = &*nodes[b.0].value;
            let (m, k) = (av.dims()[0], av.dims()[1]);
            let n = g.dims()[1];
            let (ni, ki) = (n as isize, k as isize);
            if let Some(da) = grad_buf(nodes, grads, a) {
                // dA = G·Bᵀ (or G·B when B was used transposed)
                let b_strides = if transpose_b { (ki, 1) } else { (1, ni) };
                T::gemm(m, n, k, gd, (ni, 1), bv.data(), b_strides, T::one(), da);
            }
            if let Some(db) = grad_buf(nodes, grads, b) {
                if transpose_b {
                    // dB[n×k] = Gᵀ·A
                    T::gemm(n, m, k, gd, (1, ni), av.data(), (ki, 1), T::one(), db);
                } else {
                    // dB[k×n] = Aᵀ·G
                    T::gemm(k, m, n, av.data(), (1, ki), gd, (ni, 1), T::one(), db);
                }
            }
        }
        &Op::Add(a, b) => {
            accumulate(nodes, grads, a, |j| gd[j]);
            accumulate(nodes, grads, b, |j| gd[j]);
        }
        &Op::AddBias { x, bias } => {
            accumulate(nodes, grads, x, |j| gd[j]);
            let n = g.last_dim();
            let rows = g.rows();
            accumulate(nodes, grads, bias, |c| (0..rows).map(|r| gd[r * n + c]).sum());
        }
        &Op::Mul(a, b) => {
            let av = &*nodes[a.0].value;
            let bv = &*nodes[b.0].value;
            accumulate(nodes, grads, a, |j| gd[j] * bv.data()[j]);
            accumulate(nodes, grads, b, |j| gd[j] * av.data()[j]);
        }
        &Op::Scale(a, c) => accumulate(nodes, grads, a, |j| gd[j] * c),
        &Op::Sum(a) => accumulate(nodes, grads, a, |_| gd[0]),
        &Op::Silu(a) => {
            let xv = &*nodes[a.0].value;
            accumulate(nodes, grads, a, |j| {
                let x = xv.data()[j];
                let s = ops::sigmoid(x);
                gd[j] * s * (T::one() + x * (T::one() - s))
            });
        }
        &Op::Sigmoid(a) => {
            let y = &*nodes[i].value;
            accumulate(nodes, grads, a, |j| {
                let s = y.data()[j];
                gd[j] * s * (T::one() - s)
            });
        }
        &Op::Softmax { x, axis } => {
            let y = &*nodes[i].value;
            let (outer, len, inner) = ops::axis_geometry(y.dims(), axis);
            let yd = y.data();
            let mut dx = vec![T::zero(); yd.len()];
            for o in 0..outer {
                for c in 0..inner {
                    let idx = |j: usize| (o * len + j) * inner + c;
                    let dot: T = (0..len).map(|j| gd[idx(j)] * yd[idx(j)]).sum();
                    for j in 0..len {
                        dx[idx(j)] = yd[idx(j)] * (gd[idx(j)] - dot);
                    }
                }
            }
            accumulate(nodes, grads, x, |j| dx[j]);
        }
        &Op::CausalSoftmax(x) => {
            let y = &*nodes[i].value;
            let n = y.dims()[0];
            let yd = y.data();
            let mut dx = vec![T::zero(); yd.len()];
            for r in 0..n {
                let span = r * n..r * n + r + 1;
                let dot: T = span.clone().map(|j| gd[j] * yd[j]).sum();
                for j in span {
                    dx[j] = yd[j] * (gd[j] - dot);
                }
            }
            accumulate(nodes, grads, x, |j| dx[j]);
        }
        Op::RmsNorm { x, gain, inv } => {
            let (x, gain) = (*x, *gain);
            let xv = &*nodes[x.0].value;
            let gv = &*nodes[gain.0].value;
            let n = xv.last_dim();
            let inv_n = T::one() / T::lit(n as f64);
            let (xd, gn) = (xv.data(), gv.data());
            if nodes[x.0].requires_grad {
                let mut dx = vec![T::zero(); xd.len()];
                for r in 0..xv.rows() {
                    let base = r * n;
                    let rinv = inv[r];
                    let dot: T = (0..n).map(|c| gd[base + c] * gn[c] * xd[base + c]).sum();
                    let coef = rinv * rinv * rinv * inv_n * dot;
                    for c in 0..n {
                        dx[base + c] = rinv * gd[base + c] * gn[c] - coef * xd[base + c];
                    }
                }
                accumulate(nodes, grads, x, |j| dx[j]);
            }
            let rows = xv.rows();
            accumulate(nodes, grads, gain, |c| (0..rows).map(|r| gd[r * n + c] * xd[r * n + c] * inv[r]).sum());
        }
        &Op::SliceCols { x, start } => {
            let cols = nodes[x.0].value.dims()[1];
            let len = g.dims()[1];
            if let Some(dx) = grad_buf(nodes, grads, x) {
                for (r, grow) in gd.chunks(len).enumerate() {
                    for (c, &gv) in grow.iter().enumerate() {
                        dx[r * cols + start + c] = dx[r * cols + start + c] + gv;
                    }
                }
            }
        }
        Op::ConcatCols(parts) => {
            let total = g.dims()[1];
            let mut offset = 0;
            for &p in parts {
                let w = nodes[p.0].value.dims()[1];
                accumulate(nodes, grads, p, |j| gd[(j / w) * total + offset + j % w]);
                offset += w;
            }
        }
        &Op::SelectRow { x, row } => {
            let n = g.numel();
            if let Some(dx) = grad_buf(nodes, grads, x) {
                for (c, &gv) in gd.iter().enumerate() {
                    dx[row * n + c] = dx[row * n + c] + gv;
                }
            }
        }
        &Op::CrossEntropy { logits, target } => {
            let lv = &*nodes[logits.0].value;
            let lse = ops::log_sum_exp(lv.data());
            accumulate(nodes, grads, logits, |j| {
                let p = (lv.data()[j] - lse).exp();
                let hot = if j == target { T::one() } else { T::zero() };
                gd[0] * (p - hot)
            });
        }
        Op::BceWithLogits { logits, targets } => {
            let logits = *logits;
            let lv = &*nodes[logits.0].value;
            let c = T::lit(targets.len() as f64);
            accumulate(nodes, grads, logits, |j| gd[0] * (ops::sigmoid(lv.data()[j]) - targets[j]) / c);
        }
        Op::Custom { inputs, backward } => {
            let input_vals: Vec<&Tensor<T>> = inputs.iter().map(|v| &*nodes[v.0].value).collect();
            let input_grads = backward(&input_vals, &nodes[i].value, g);
            for (&v, dg) in inputs.iter().zip(input_grads) {
                assert_eq!(dg.dims(), nodes[v.0].value.dims(), "custom backward returned a mis-shaped gradient");
                accumulate(nodes, grads, v, |j| dg.data()[j]);
            }
        }
    }
}
