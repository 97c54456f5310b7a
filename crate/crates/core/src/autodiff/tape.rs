//! Reverse-mode differentiation over a flat tape.
//!
//! Every operation appends a node holding its value and the handles of its
//! inputs, so node order is already a topological order and `backward`
//! walks it in reverse. Handles ([`Var`]) are plain indices into one tape.

use std::rc::Rc;

use super::tensor::Tensor;
use crate::error::{LicapError, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    /// `x[r, c] * w[r]` with `w` a column.
    MulColumn(Var, Var),
    /// `x[r, c] + b[c]` with `b` a row.
    AddRow(Var, Var),
    Scale(Var, f64),
    Exp(Var),
    Log(Var),
    LeakyRelu(Var, f64),
    Sum(Var),
    Dot(Var, Var),
    MeanRows(Var, Rc<[usize]>),
    GatherRows(Var, Rc<[usize]>),
    ScatterAddRows(Var, Rc<[usize]>),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceRows(Var, usize),
    SegmentSoftmax(Var, Rc<[usize]>),
    LogSumExpRows(Var),
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
    grad: Option<Tensor>,
}

/// Records a differentiable computation. Confined to one thread.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn mismatch(op: &'static str, a: &Tensor, b: &Tensor) -> LicapError {
    LicapError::ShapeMismatch {
        op,
        left: a.shape(),
        right: b.shape(),
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Records an input tensor. Gradients are accumulated only when
    /// `requires_grad` is set.
    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn param(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Accumulated gradient of a leaf, `None` before the first backward pass
    /// or when the leaf does not require gradients.
    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.nodes[v.0].grad.as_ref()
    }

    /// Like [`Tape::grad`] but an untouched leaf reads as zeros.
    pub fn grad_or_zero(&self, v: Var) -> Tensor {
        match self.grad(v) {
            Some(g) => g.clone(),
            None => {
                let x = self.value(v);
                Tensor::zeros(x.rows(), x.cols())
            }
        }
    }

    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::MatMul(a, b), rg))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let value = self.value(a).transpose();
        let rg = self.rg(a);
        self.push(value, Op::Transpose(a), rg)
    }

    fn zip_same(&self, op: &'static str, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        let (x, y) = (self.value(a), self.value(b));
        if x.shape() != y.shape() {
            return Err(mismatch(op, x, y));
        }
        let data = x.data().iter().zip(y.data()).map(|(&p, &q)| f(p, q)).collect();
        Tensor::new(x.rows(), x.cols(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.zip_same("add", a, b, |p, q| p + q)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.zip_same("sub", a, b, |p, q| p - q)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::Sub(a, b), rg))
    }

    /// Element-wise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.zip_same("mul", a, b, |p, q| p * q)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::Mul(a, b), rg))
    }

    /// Scales row `r` of `x` by `w[r]`.
    pub fn mul_column(&mut self, x: Var, w: Var) -> Result<Var> {
        let (xv, wv) = (self.value(x), self.value(w));
        if wv.cols() != 1 || wv.rows() != xv.rows() {
            return Err(mismatch("mul_column", xv, wv));
        }
        let cols = xv.cols();
        let data = xv
            .data()
            .iter()
            .enumerate()
            .map(|(k, &v)| v * wv.data()[k / cols.max(1)])
            .collect();
        let value = Tensor::new(xv.rows(), cols, data)?;
        let rg = self.rg(x) || self.rg(w);
        Ok(self.push(value, Op::MulColumn(x, w), rg))
    }

    /// Adds the row vector `b` to every row of `x`.
    pub fn add_row(&mut self, x: Var, b: Var) -> Result<Var> {
        let (xv, bv) = (self.value(x), self.value(b));
        if bv.rows() != 1 || bv.cols() != xv.cols() {
            return Err(mismatch("add_row", xv, bv));
        }
        let cols = xv.cols();
        let data = xv
            .data()
            .iter()
            .enumerate()
            .map(|(k, &v)| v + bv.data()[k % cols])
            .collect();
        let value = Tensor::new(xv.rows(), cols, data)?;
        let rg = self.rg(x) || self.rg(b);
        Ok(self.push(value, Op::AddRow(x, b), rg))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let x = self.value(a);
        let value = Tensor::new(x.rows(), x.cols(), x.data().iter().map(|v| v * factor).collect())
            .expect("same shape");
        let rg = self.rg(a);
        self.push(value, Op::Scale(a, factor), rg)
    }

    fn map(&mut self, a: Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let x = self.value(a);
        let value = Tensor::new(x.rows(), x.cols(), x.data().iter().map(|&v| f(v)).collect())
            .expect("same shape");
        let rg = self.rg(a);
        self.push(value, op, rg)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.map(a, Op::Exp(a), f64::exp)
    }

    pub fn log(&mut self, a: Var) -> Var {
        self.map(a, Op::Log(a), f64::ln)
    }

    /// `x` for `x > 0`, `slope * x` otherwise. The derivative at exactly 0 is `slope`.
    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        self.map(a, Op::LeakyRelu(a, slope), |v| if v > 0.0 { v } else { slope * v })
    }

    /// Sum of all entries as a `1×1` tensor.
    pub fn sum(&mut self, a: Var) -> Var {
        let total = self.value(a).data().iter().sum();
        let rg = self.rg(a);
        self.push(Tensor::scalar(total), Op::Sum(a), rg)
    }

    /// Frobenius inner product of two same-shape tensors.
    pub fn dot(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        if x.shape() != y.shape() {
            return Err(mismatch("dot", x, y));
        }
        let total = x.data().iter().zip(y.data()).map(|(p, q)| p * q).sum();
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::scalar(total), Op::Dot(a, b), rg))
    }

    fn check_rows(&self, op: &'static str, x: Var, rows: &[usize]) -> Result<()> {
        let n = self.value(x).rows();
        match rows.iter().find(|&&r| r >= n) {
            Some(r) => Err(LicapError::invalid(format!("{op}: row {r} out of range for {n} rows"))),
            None => Ok(()),
        }
    }

    /// Element-wise mean of the selected rows as a `1×cols` row.
    pub fn mean_rows(&mut self, x: Var, rows: impl Into<Rc<[usize]>>) -> Result<Var> {
        let rows = rows.into();
        if rows.is_empty() {
            return Err(LicapError::invalid("mean_rows over an empty row set"));
        }
        self.check_rows("mean_rows", x, &rows)?;
        let xv = self.value(x);
        let mut out = vec![0.0; xv.cols()];
        for &r in rows.iter() {
            for (o, v) in out.iter_mut().zip(xv.row(r)) {
                *o += v;
            }
        }
        let k = rows.len() as f64;
        out.iter_mut().for_each(|o| *o /= k);
        let value = Tensor::new(1, xv.cols(), out)?;
        let rg = self.rg(x);
        Ok(self.push(value, Op::MeanRows(x, rows), rg))
    }

    /// Stacks `x[rows[0]], x[rows[1]], ...`.
    pub fn gather_rows(&mut self, x: Var, rows: impl Into<Rc<[usize]>>) -> Result<Var> {
        let rows = rows.into();
        self.check_rows("gather_rows", x, &rows)?;
        let xv = self.value(x);
        let mut data = Vec::with_capacity(rows.len() * xv.cols());
        for &r in rows.iter() {
            data.extend_from_slice(xv.row(r));
        }
        let value = Tensor::new(rows.len(), xv.cols(), data)?;
        let rg = self.rg(x);
        Ok(self.push(value, Op::GatherRows(x, rows), rg))
    }

    /// `out[targets[k]] += x[k]` into an `out_rows × cols` zero tensor,
    /// accumulated in increasing `k`.
    pub fn scatter_add_rows(
        &mut self,
        x: Var,
        targets: impl Into<Rc<[usize]>>,
        out_rows: usize,
    ) -> Result<Var> {
        let targets = targets.into();
        let xv = self.value(x);
        if targets.len() != xv.rows() {
            return Err(LicapError::invalid(format!(
                "scatter_add_rows: {} targets for {} rows",
                targets.len(),
                xv.rows()
            )));
        }
        let cols = xv.cols();
        let mut out = Tensor::zeros(out_rows, cols);
        for (k, &t) in targets.iter().enumerate() {
            if t >= out_rows {
                return Err(LicapError::invalid(format!(
                    "scatter_add_rows: target {t} out of range for {out_rows} rows"
                )));
            }
            let dst = &mut out.data_mut()[t * cols..(t + 1) * cols];
            for (o, v) in dst.iter_mut().zip(xv.row(k)) {
                *o += v;
            }
        }
        let rg = self.rg(x);
        Ok(self.push(out, Op::ScatterAddRows(x, targets), rg))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| LicapError::invalid("concat_cols of nothing"))?;
        let rows = self.value(first).rows();
        for &p in parts {
            if self.value(p).rows() != rows {
                return Err(mismatch("concat_cols", self.value(first), self.value(p)));
            }
        }
        let cols: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(r));
            }
        }
        let value = Tensor::new(rows, cols, data)?;
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(value, Op::ConcatCols(parts.to_vec()), rg))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| LicapError::invalid("concat_rows of nothing"))?;
        let cols = self.value(first).cols();
        for &p in parts {
            if self.value(p).cols() != cols {
                return Err(mismatch("concat_rows", self.value(first), self.value(p)));
            }
        }
        let rows: usize = parts.iter().map(|&p| self.value(p).rows()).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for &p in parts {
            data.extend_from_slice(self.value(p).data());
        }
        let value = Tensor::new(rows, cols, data)?;
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(value, Op::ConcatRows(parts.to_vec()), rg))
    }

    /// Rows `start..start + len` of `x`.
    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let xv = self.value(x);
        if start + len > xv.rows() {
            return Err(LicapError::invalid(format!(
                "slice_rows {start}..{} of {} rows",
                start + len,
                xv.rows()
            )));
        }
        let cols = xv.cols();
        let data = xv.data()[start * cols..(start + len) * cols].to_vec();
        let value = Tensor::new(len, cols, data)?;
        let rg = self.rg(x);
        Ok(self.push(value, Op::SliceRows(x, start), rg))
    }

    /// Softmax of a column of logits within each segment. `segments[e]` is the
    /// segment of entry `e`; segments need not be contiguous.
    pub fn segment_softmax(&mut self, logits: Var, segments: impl Into<Rc<[usize]>>) -> Result<Var> {
        let segments = segments.into();
        let x = self.value(logits);
        if x.cols() != 1 || segments.len() != x.rows() {
            return Err(LicapError::invalid(format!(
                "segment_softmax: {} segment ids for logits of shape {:?}",
                segments.len(),
                x.shape()
            )));
        }
        let n_seg = segments.iter().max().map_or(0, |m| m + 1);
        let mut max = vec![f64::NEG_INFINITY; n_seg];
        for (&s, &v) in segments.iter().zip(x.data()) {
            if v > max[s] {
                max[s] = v;
            }
        }
        let mut out: Vec<f64> = segments
            .iter()
            .zip(x.data())
            .map(|(&s, &v)| (v - max[s]).exp())
            .collect();
        let mut denom = vec![0.0; n_seg];
        for (&s, &e) in segments.iter().zip(&out) {
            denom[s] += e;
        }
        for (o, &s) in out.iter_mut().zip(segments.iter()) {
            *o /= denom[s];
        }
        let value = Tensor::column(out);
        let rg = self.rg(logits);
        Ok(self.push(value, Op::SegmentSoftmax(logits, segments), rg))
    }

    /// Max-shifted `log Σ_c exp(x[r, c])` per row, as a column.
    pub fn logsumexp_rows(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        if xv.cols() == 0 {
            return Err(LicapError::invalid("logsumexp over zero columns"));
        }
        let out = (0..xv.rows())
            .map(|r| logsumexp(xv.row(r)))
            .collect();
        let rg = self.rg(x);
        Ok(self.push(Tensor::column(out), Op::LogSumExpRows(x), rg))
    }

    /// Back-propagates from a scalar root, adding `d root / d leaf` into the
    /// gradient buffer of every leaf that requires gradients.
    pub fn backward(&mut self, root: Var) -> Result<()> {
        let shape = self.value(root).shape();
        if shape != [1, 1] {
            return Err(LicapError::NotScalar(shape));
        }
        let mut adj: Vec<Option<Vec<f64>>> = vec![None; root.0 + 1];
        adj[root.0] = Some(vec![1.0]);

        for id in (0..=root.0).rev() {
            if !self.nodes[id].requires_grad {
                continue;
            }
            let Some(g) = adj[id].take() else { continue };
            let node = &self.nodes[id];
            match &node.op {
                Op::Leaf => {
                    let node = &mut self.nodes[id];
                    match &mut node.grad {
                        Some(acc) => acc.data_mut().iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                        None => {
                            node.grad = Some(Tensor::new(node.value.rows(), node.value.cols(), g)?)
                        }
                    }
                }
                Op::MatMul(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    let (m, k, n) = (av.rows(), av.cols(), bv.cols());
                    if self.rg(*a) {
                        let da = accum(&mut adj, &self.nodes, *a);
                        for i in 0..m {
                            for p in 0..k {
                                let mut s = 0.0;
                                for j in 0..n {
                                    s += g[i * n + j] * bv.data()[p * n + j];
                                }
                                da[i * k + p] += s;
                            }
                        }
                    }
                    if self.rg(*b) {
                        let db = accum(&mut adj, &self.nodes, *b);
                        for i in 0..m {
                            for p in 0..k {
                                let a_ip = av.data()[i * k + p];
                                let row = &mut db[p * n..(p + 1) * n];
                                for (d, gv) in row.iter_mut().zip(&g[i * n..(i + 1) * n]) {
                                    *d += a_ip * gv;
                                }
                            }
                        }
                    }
                }
                Op::Transpose(a) => {
                    let (r, c) = (node.value.rows(), node.value.cols());
                    let da = accum(&mut adj, &self.nodes, *a);
                    for i in 0..r {
                        for j in 0..c {
                            da[j * r + i] += g[i * c + j];
                        }
                    }
                }
                Op::Add(a, b) | Op::Sub(a, b) => {
                    let sign = if matches!(node.op, Op::Sub(..)) { -1.0 } else { 1.0 };
                    let (a, b) = (*a, *b);
                    if self.rg(a) {
                        add_into(accum(&mut adj, &self.nodes, a), &g, 1.0);
                    }
                    if self.rg(b) {
                        add_into(accum(&mut adj, &self.nodes, b), &g, sign);
                    }
                }
                Op::Mul(a, b) => {
                    let (a, b) = (*a, *b);
                    if self.rg(a) {
                        let other = self.value(b).data();
                        let da = accum(&mut adj, &self.nodes, a);
                        for ((d, gv), o) in da.iter_mut().zip(&g).zip(other) {
                            *d += gv * o;
                        }
                    }
                    if self.rg(b) {
                        let other = self.value(a).data();
                        let db = accum(&mut adj, &self.nodes, b);
                        for ((d, gv), o) in db.iter_mut().zip(&g).zip(other) {
                            *d += gv * o;
                        }
                    }
                }
                Op::MulColumn(x, w) => {
                    let (x, w) = (*x, *w);
                    let cols = node.value.cols();
                    if self.rg(x) {
                        let wv = self.value(w).data();
                        let dx = accum(&mut adj, &self.nodes, x);
                        for (k, d) in dx.iter_mut().enumerate() {
                            *d += g[k] * wv[k / cols];
                        }
                    }
                    if self.rg(w) {
                        let xv = self.value(x).data();
                        let dw = accum(&mut adj, &self.nodes, w);
                        for (r, d) in dw.iter_mut().enumerate() {
                            let mut s = 0.0;
                            for c in 0..cols {
                                s += g[r * cols + c] * xv[r * cols + c];
                            }
                            *d += s;
                        }
                    }
                }
                Op::AddRow(x, b) => {
                    let (x, b) = (*x, *b);
                    let cols = node.value.cols();
                    if self.rg(x) {
                        add_into(accum(&mut adj, &self.nodes, x), &g, 1.0);
                    }
                    if self.rg(b) {
                        let db = accum(&mut adj, &self.nodes, b);
                        for (k, gv) in g.iter().enumerate() {
                            db[k % cols] += gv;
                        }
                    }
                }
                Op::Scale(a, f) => {
                    let f = *f;
                    add_into(accum(&mut adj, &self.nodes, *a), &g, f);
                }
                Op::Exp(a) => {
                    let y = node.value.data();
                    let da = accum(&mut adj, &self.nodes, *a);
                    for ((d, gv), yv) in da.iter_mut().zip(&g).zip(y) {
                        *d += gv * yv;
                    }
                }
                Op::Log(a) => {
                    let x = self.value(*a).data();
                    let da = accum(&mut adj, &self.nodes, *a);
                    for ((d, gv), xv) in da.iter_mut().zip(&g).zip(x) {
                        *d += gv / xv;
                    }
                }
                Op::LeakyRelu(a, slope) => {
                    let slope = *slope;
                    let x = self.value(*a).data();
                    let da = accum(&mut adj, &self.nodes, *a);
                    for ((d, gv), &xv) in da.iter_mut().zip(&g).zip(x) {
                        *d += if xv > 0.0 { *gv } else { slope * gv };
                    }
                }
                Op::Sum(a) => {
                    let da = accum(&mut adj, &self.nodes, *a);
                    da.iter_mut().for_each(|d| *d += g[0]);
                }
                Op::Dot(a, b) => {
                    let (a, b) = (*a, *b);
                    if self.rg(a) {
                        let other = self.value(b).data();
                        add_into(accum(&mut adj, &self.nodes, a), other, g[0]);
                    }
                    if self.rg(b) {
                        let other = self.value(a).data();
                        add_into(accum(&mut adj, &self.nodes, b), other, g[0]);
                    }
                }
                Op::MeanRows(x, rows) => {
                    let cols = node.value.cols();
                    let inv = 1.0 / rows.len() as f64;
                    let dx = accum(&mut adj, &self.nodes, *x);
                    for &r in rows.iter() {
                        for c in 0..cols {
                            dx[r * cols + c] += g[c] * inv;
                        }
                    }
                }
                Op::GatherRows(x, rows) => {
                    let cols = node.value.cols();
                    let dx = accum(&mut adj, &self.nodes, *x);
                    for (k, &r) in rows.iter().enumerate() {
                        for c in 0..cols {
                            dx[r * cols + c] += g[k * cols + c];
                        }
                    }
                }
                Op::ScatterAddRows(x, targets) => {
                    let cols = node.value.cols();
                    let dx = accum(&mut adj, &self.nodes, *x);
                    for (k, &t) in targets.iter().enumerate() {
                        for c in 0..cols {
                            dx[k * cols + c] += g[t * cols + c];
                        }
                    }
                }
                Op::ConcatCols(parts) => {
                    let rows = node.value.rows();
                    let total = node.value.cols();
                    let mut offset = 0;
                    for &p in parts {
                        let pc = self.value(p).cols();
                        if self.rg(p) {
                            let dp = accum(&mut adj, &self.nodes, p);
                            for r in 0..rows {
                                for c in 0..pc {
                                    dp[r * pc + c] += g[r * total + offset + c];
                                }
                            }
                        }
                        offset += pc;
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let len = self.value(p).len();
                        if self.rg(p) {
                            add_into(accum(&mut adj, &self.nodes, p), &g[offset..offset + len], 1.0);
                        }
                        offset += len;
                    }
                }
                Op::SliceRows(x, start) => {
                    let cols = node.value.cols();
                    let start = *start;
                    let dx = accum(&mut adj, &self.nodes, *x);
                    for (k, gv) in g.iter().enumerate() {
                        dx[start * cols + k] += gv;
                    }
                }
                Op::SegmentSoftmax(x, segments) => {
                    let y = node.value.data();
                    let n_seg = segments.iter().max().map_or(0, |m| m + 1);
                    let mut inner = vec![0.0; n_seg];
                    for ((&s, gv), yv) in segments.iter().zip(&g).zip(y) {
                        inner[s] += gv * yv;
                    }
                    let dx = accum(&mut adj, &self.nodes, *x);
                    for (e, d) in dx.iter_mut().enumerate() {
                        *d += y[e] * (g[e] - inner[segments[e]]);
                    }
                }
                Op::LogSumExpRows(x) => {
                    let xv = self.value(*x);
                    let cols = xv.cols();
                    let y = node.value.data();
                    let dx = accum(&mut adj, &self.nodes, *x);
                    for r in 0..xv.rows() {
                        for c in 0..cols {
                            dx[r * cols + c] += g[r] * (xv.data()[r * cols + c] - y[r]).exp();
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

/// Zero-initialised adjoint buffer of `v`, created on first use.
fn accum<'a>(adj: &'a mut [Option<Vec<f64>>], nodes: &[Node], v: Var) -> &'a mut Vec<f64> {
    adj[v.0].get_or_insert_with(|| vec![0.0; nodes[v.0].value.len()])
}

fn add_into(dst: &mut [f64], src: &[f64], factor: f64) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += factor * s;
    }
}

/// Max-shifted log-sum-exp of a non-empty slice.
pub fn logsumexp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.iter().map(|&x| (x - m).exp()).sum::<f64>().ln()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(rows: &[Vec<f64>]) -> Tensor {
        Tensor::from_rows(rows).unwrap()
    }

    #[test]
    fn matmul_forward() {
        let mut tape = Tape::new();
        let a = tape.constant(t(&[vec![1.0, 2.0], vec![3.0, 4.0]]));
        let b = tape.constant(t(&[vec![5.0], vec![6.0]]));
        let c = tape.matmul(a, b).unwrap();
        assert_eq!(tape.value(c).data(), &[17.0, 39.0]);
        let bad = tape.constant(Tensor::zeros(3, 1));
        assert!(matches!(tape.matmul(a, bad), Err(LicapError::ShapeMismatch { .. })));
    }

    #[test]
    fn segment_softmax_values() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::column(vec![0.7, 2.0, 2.0, 2.0, 0.0, 3f64.ln()]));
        let y = tape.segment_softmax(x, vec![0, 1, 1, 1, 2, 2]).unwrap();
        let v = tape.value(y).data();
        assert_eq!(v[0], 1.0);
        for &p in &v[1..4] {
            assert!((p - 1.0 / 3.0).abs() < 1e-15);
        }
        assert!((v[4] - 0.25).abs() < 1e-15);
        assert!((v[5] - 0.75).abs() < 1e-15);
    }

    #[test]
    fn leaky_relu_values_and_kink() {
        let mut tape = Tape::new();
        let x = tape.param(Tensor::column(vec![2.0, -1.0, 0.0]));
        let y = tape.leaky_relu(x, 0.2);
        assert_eq!(tape.value(y).data(), &[2.0, -0.2, 0.0]);
        let s = tape.sum(y);
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(x).unwrap().data(), &[1.0, 0.2, 0.2]);
    }

    #[test]
    fn elementwise_suite() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::column(vec![1.0, 0.0]));
        let b = tape.constant(Tensor::column(vec![0.0, 1.0]));
        let d = tape.dot(a, b).unwrap();
        assert_eq!(tape.value(d).item(), 0.0);

        let x = tape.constant(Tensor::scalar(1.5));
        let e = tape.exp(x);
        let l = tape.log(e);
        assert!((tape.value(l).item() - 1.5).abs() < 1e-15);

        let m = tape.constant(t(&[vec![2.0, 4.0], vec![4.0, 8.0]]));
        let mean = tape.mean_rows(m, vec![0, 1]).unwrap();
        assert_eq!(tape.value(mean).data(), &[3.0, 6.0]);
        assert!(tape.mean_rows(m, Vec::new()).is_err());

        let c = tape.concat_cols(&[a, b]).unwrap();
        assert_eq!(tape.value(c).data(), &[1.0, 0.0, 0.0, 1.0]);
        let r = tape.concat_rows(&[a, b]).unwrap();
        assert_eq!(tape.value(r).data(), &[1.0, 0.0, 0.0, 1.0]);
        assert_eq!(tape.value(r).shape(), [4, 1]);
        let s = tape.scale(a, -2.0);
        assert_eq!(tape.value(s).data(), &[-2.0, -0.0]);
        assert!(tape.add(a, m).is_err());
    }

    #[test]
    fn backward_examples() {
        let mut tape = Tape::new();
        let x = tape.param(Tensor::column(vec![3.0]));
        let l = tape.dot(x, x).unwrap();
        tape.backward(l).unwrap();
        assert_eq!(tape.grad(x).unwrap().data(), &[6.0]);

        let mut tape = Tape::new();
        let a = tape.constant(t(&[vec![1.0, 2.0]]));
        let x = tape.param(Tensor::column(vec![0.3, -0.7]));
        let unused = tape.param(Tensor::column(vec![1.0, 1.0]));
        let y = tape.matmul(a, x).unwrap();
        let l = tape.sum(y);
        tape.backward(l).unwrap();
        assert_eq!(tape.grad(x).unwrap().data(), &[1.0, 2.0]);
        assert!(tape.grad(unused).is_none());
        assert_eq!(tape.grad_or_zero(unused).data(), &[0.0, 0.0]);
    }

    #[test]
    fn backward_accumulates_until_zeroed() {
        let mut tape = Tape::new();
        let x = tape.param(Tensor::column(vec![3.0]));
        let l = tape.dot(x, x).unwrap();
        tape.backward(l).unwrap();
        tape.backward(l).unwrap();
        assert_eq!(tape.grad(x).unwrap().data(), &[12.0]);
        tape.zero_grad();
        assert!(tape.grad(x).is_none());
        tape.backward(l).unwrap();
        assert_eq!(tape.grad(x).unwrap().data(), &[6.0]);
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut tape = Tape::new();
        let x = tape.param(Tensor::column(vec![1.0, 2.0]));
        assert!(matches!(tape.backward(x), Err(LicapError::NotScalar([2, 1]))));
    }

    #[test]
    fn logsumexp_is_stable() {
        assert!((logsumexp(&[1000.0, 1000.0]) - (1000.0 + 2f64.ln())).abs() < 1e-12);
        assert_eq!(logsumexp(&[-3.5]), -3.5);
    }
}
