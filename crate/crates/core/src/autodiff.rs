//! A small reverse-mode tape over [`Matrix`] values.
//!
//! Nodes are appended in evaluation order, so a single reverse sweep over
//! the node list is a valid topological order for backpropagation. All
//! gradient accumulation happens in that fixed order, which keeps training
//! runs bit-reproducible.

use crate::error::{Result, SkiError};
use crate::par::Exec;
use crate::tensor::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
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
    MatMulNT(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    Tanh(Var),
    Exp(Var),
    Square(Var),
    SegmentMean(Var, Vec<(usize, usize)>),
    NormalizeRows(Var, Vec<f64>),
    LogSoftmaxRows(Var),
    CausalSoftmax(Var),
    Pick(Var, Vec<usize>),
    GatherRows(Var, Vec<usize>),
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    SliceRows(Var, usize),
    SliceCols(Var, usize),
    Transpose(Var),
    Sum(Var),
    Mean(Var),
    MaskedMean(Var, Vec<bool>),
}

struct Node {
    value: Matrix,
    op: Op,
    requires_grad: bool,
}

pub struct Graph {
    nodes: Vec<Node>,
    exec: Exec,
}

impl Default for Graph {
    fn default() -> Self {
        Graph::new()
    }
}

/// Gradients produced by [`Graph::backward`], indexed by node.
pub struct Gradients {
    grads: Vec<Option<Matrix>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Matrix> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Matrix> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

impl Graph {
    pub fn new() -> Self {
        Graph::with_exec(Exec::default())
    }

    pub fn with_exec(exec: Exec) -> Self {
        Graph {
            nodes: Vec::new(),
            exec,
        }
    }

    pub fn exec(&self) -> Exec {
        self.exec
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value.item()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn leaf(&mut self, value: Matrix, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn constant(&mut self, value: Matrix) -> Var {
        self.leaf(value, false)
    }

    /// Copies the current value of `v` into a new constant (gradient stop).
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.nodes[v.0].value.clone();
        self.constant(value)
    }

    fn push(&mut self, value: Matrix, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(SkiError::shape(op, format!("{sa:?} vs {sb:?}")));
        }
        Ok(())
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b), self.exec)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(value, Op::MatMul(a, b), rg))
    }

    /// `a · bᵀ`
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul_nt(self.value(b), self.exec)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(value, Op::MatMulNT(a, b), rg))
    }

    fn zip_with(&mut self, a: Var, b: Var, op: Op, name: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Var> {
        self.same_shape(name, a, b)?;
        let (x, y) = (self.value(a), self.value(b));
        let data = x.data().iter().zip(y.data()).map(|(&p, &q)| f(p, q)).collect();
        let value = Matrix::from_vec(x.rows(), x.cols(), data)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(value, op, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, Op::Add(a, b), "add", |p, q| p + q)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, Op::Sub(a, b), "sub", |p, q| p - q)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, Op::Mul(a, b), "mul", |p, q| p * q)
    }

    /// Adds a `1 x n` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (x, r) = (self.value(a), self.value(row));
        if r.rows() != 1 || r.cols() != x.cols() {
            return Err(SkiError::shape(
                "add_row",
                format!("{:?} + row {:?}", x.shape(), r.shape()),
            ));
        }
        let mut value = x.clone();
        let bias = r.row(0).to_vec();
        for i in 0..value.rows() {
            for (v, b) in value.row_mut(i).iter_mut().zip(&bias) {
                *v += b;
            }
        }
        let rg = self.rg(&[a, row]);
        Ok(self.push(value, Op::AddRow(a, row), rg))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let value = self.value(a).map(|v| v * s);
        let rg = self.rg(&[a]);
        self.push(value, Op::Scale(a, s), rg)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let value = self.value(a).map(f64::tanh);
        let rg = self.rg(&[a]);
        self.push(value, Op::Tanh(a), rg)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let value = self.value(a).map(f64::exp);
        let rg = self.rg(&[a]);
        self.push(value, Op::Exp(a), rg)
    }

    pub fn square(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|v| v * v);
        let rg = self.rg(&[a]);
        self.push(value, Op::Square(a), rg)
    }

    /// Mean over contiguous row segments `(start, len)`; one output row each.
    pub fn segment_mean(&mut self, a: Var, segments: Vec<(usize, usize)>) -> Result<Var> {
        let x = self.value(a);
        let mut value = Matrix::zeros(segments.len(), x.cols());
        for (s, &(start, len)) in segments.iter().enumerate() {
            if len == 0 || start + len > x.rows() {
                return Err(SkiError::shape(
                    "segment_mean",
                    format!("segment ({start}, {len}) over {} rows", x.rows()),
                ));
            }
            let out = value.row_mut(s);
            for r in start..start + len {
                for (o, v) in out.iter_mut().zip(x.row(r)) {
                    *o += v;
                }
            }
            let inv = 1.0 / len as f64;
            for o in out.iter_mut() {
                *o *= inv;
            }
        }
        let rg = self.rg(&[a]);
        Ok(self.push(value, Op::SegmentMean(a, segments), rg))
    }

    /// Mean over consecutive groups of `group` rows.
    pub fn group_mean(&mut self, a: Var, group: usize) -> Result<Var> {
        let rows = self.value(a).rows();
        if group == 0 || !rows.is_multiple_of(group) {
            return Err(SkiError::shape(
                "group_mean",
                format!("{rows} rows not divisible into groups of {group}"),
            ));
        }
        let segments = (0..rows / group).map(|i| (i * group, group)).collect();
        self.segment_mean(a, segments)
    }

    /// L2-normalizes every row. A zero row is a degenerate-input error.
    pub fn normalize_rows(&mut self, a: Var) -> Result<Var> {
        let x = self.value(a);
        let mut value = x.clone();
        let mut norms = Vec::with_capacity(x.rows());
        for i in 0..x.rows() {
            let n = x.row(i).iter().map(|v| v * v).sum::<f64>().sqrt();
            if !(n > 0.0) || !n.is_finite() {
                return Err(SkiError::Degenerate(format!(
                    "row {i} has norm {n}; cannot normalize"
                )));
            }
            for v in value.row_mut(i) {
                *v /= n;
            }
            norms.push(n);
        }
        let rg = self.rg(&[a]);
        Ok(self.push(value, Op::NormalizeRows(a, norms), rg))
    }

    pub fn log_softmax_rows(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let mut value = x.clone();
        for i in 0..x.rows() {
            let row = value.row_mut(i);
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
            for v in row.iter_mut() {
                *v -= lse;
            }
        }
        let rg = self.rg(&[a]);
        self.push(value, Op::LogSoftmaxRows(a), rg)
    }

    /// Row softmax of a square score matrix restricted to columns `j <= i`.
    pub fn causal_softmax(&mut self, a: Var) -> Result<Var> {
        let x = self.value(a);
        if x.rows() != x.cols() {
            return Err(SkiError::shape("causal_softmax", format!("{:?} not square", x.shape())));
        }
        let n = x.rows();
        let mut value = Matrix::zeros(n, n);
        for i in 0..n {
            let row = &x.row(i)[..=i];
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = row.iter().map(|v| (v - m).exp()).collect();
            let z: f64 = exps.iter().sum();
            for (j, e) in exps.iter().enumerate() {
                value.set(i, j, e / z);
            }
        }
        let rg = self.rg(&[a]);
        Ok(self.push(value, Op::CausalSoftmax(a), rg))
    }

    /// Selects `a[i, idx[i]]` for every row, producing an `n x 1` column.
    pub fn pick(&mut self, a: Var, idx: Vec<usize>) -> Result<Var> {
        let x = self.value(a);
        if idx.len() != x.rows() {
            return Err(SkiError::shape("pick", format!("{} indices for {} rows", idx.len(), x.rows())));
        }
        let mut data = Vec::with_capacity(idx.len());
        for (i, &j) in idx.iter().enumerate() {
            if j >= x.cols() {
                return Err(SkiError::arg("index", format!("{j} out of range for {} columns", x.cols())));
            }
            data.push(x.get(i, j));
        }
        let value = Matrix::from_vec(idx.len(), 1, data)?;
        let rg = self.rg(&[a]);
        Ok(self.push(value, Op::Pick(a, idx), rg))
    }

    /// Row lookup: output row `r` is `table[idx[r]]`.
    pub fn gather_rows(&mut self, table: Var, idx: Vec<usize>) -> Result<Var> {
        let t = self.value(table);
        let mut data = Vec::with_capacity(idx.len() * t.cols());
        for &i in &idx {
            if i >= t.rows() {
                return Err(SkiError::arg("index", format!("row {i} out of range for {} rows", t.rows())));
            }
            data.extend_from_slice(t.row(i));
        }
        let value = Matrix::from_vec(idx.len(), t.cols(), data)?;
        let rg = self.rg(&[table]);
        Ok(self.push(value, Op::GatherRows(table, idx), rg))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let mats: Vec<&Matrix> = parts.iter().map(|&v| self.value(v)).collect();
        let value = Matrix::vstack(&mats)?;
        let rg = self.rg(parts);
        Ok(self.push(value, Op::ConcatRows(parts.to_vec()), rg))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = parts.first().map_or(0, |&v| self.value(v).rows());
        let mut cols = 0;
        for &p in parts {
            let m = self.value(p);
            if m.rows() != rows {
                return Err(SkiError::shape("concat_cols", format!("{} rows vs {rows}", m.rows())));
            }
            cols += m.cols();
        }
        let mut value = Matrix::zeros(rows, cols);
        let mut offset = 0;
        for &p in parts {
            let m = self.value(p);
            for r in 0..rows {
                value.row_mut(r)[offset..offset + m.cols()].copy_from_slice(m.row(r));
            }
            offset += m.cols();
        }
        let rg = self.rg(parts);
        Ok(self.push(value, Op::ConcatCols(parts.to_vec()), rg))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let x = self.value(a);
        if start + len > x.rows() {
            return Err(SkiError::shape("slice_rows", format!("{start}+{len} > {}", x.rows())));
        }
        let value = x.slice_rows(start, len);
        let rg = self.rg(&[a]);
        Ok(self.push(value, Op::SliceRows(a, start), rg))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let x = self.value(a);
        if start + len > x.cols() {
            return Err(SkiError::shape("slice_cols", format!("{start}+{len} > {}", x.cols())));
        }
        let mut value = Matrix::zeros(x.rows(), len);
        for r in 0..x.rows() {
            value.row_mut(r).copy_from_slice(&x.row(r)[start..start + len]);
        }
        let rg = self.rg(&[a]);
        Ok(self.push(value, Op::SliceCols(a, start), rg))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let value = self.value(a).transpose();
        let rg = self.rg(&[a]);
        self.push(value, Op::Transpose(a), rg)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let value = Matrix::scalar(self.value(a).sum());
        let rg = self.rg(&[a]);
        self.push(value, Op::Sum(a), rg)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let value = Matrix::scalar(x.sum() / x.len() as f64);
        let rg = self.rg(&[a]);
        self.push(value, Op::Mean(a), rg)
    }

    /// Mean of the entries whose mask bit is set (mask is row-major).
    pub fn masked_mean(&mut self, a: Var, mask: Vec<bool>) -> Result<Var> {
        let x = self.value(a);
        if mask.len() != x.len() {
            return Err(SkiError::shape("masked_mean", format!("mask {} vs {}", mask.len(), x.len())));
        }
        let count = mask.iter().filter(|&&m| m).count();
        if count == 0 {
            return Err(SkiError::arg("mask", "selects no entries"));
        }
        let s: f64 = x.data().iter().zip(&mask).filter(|(_, &m)| m).map(|(v, _)| v).sum();
        let value = Matrix::scalar(s / count as f64);
        let rg = self.rg(&[a]);
        Ok(self.push(value, Op::MaskedMean(a, mask), rg))
    }

    /// Weighted sum of scalar nodes; weights of exactly zero are skipped so
    /// the corresponding branch contributes nothing to the gradient.
    pub fn weighted_sum(&mut self, terms: &[(Var, f64)]) -> Result<Var> {
        let mut acc: Option<Var> = None;
        for &(v, w) in terms {
            if w == 0.0 {
                continue;
            }
            let t = if w == 1.0 { v } else { self.scale(v, w) };
            acc = Some(match acc {
                None => t,
                Some(a) => self.add(a, t)?,
            });
        }
        match acc {
            Some(a) => Ok(a),
            None => Ok(self.constant(Matrix::scalar(0.0))),
        }
    }

    /// Reverse sweep from a scalar node.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let l = self.value(loss);
        if l.len() != 1 {
            return Err(SkiError::shape("backward", format!("loss must be scalar, got {:?}", l.shape())));
        }
        let mut grads: Vec<Option<Matrix>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Matrix::scalar(1.0));
        for idx in (0..=loss.0).rev() {
            let Some(dy) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.requires_grad {
                grads[idx] = Some(dy);
                continue;
            }
            self.propagate(idx, &dy, &mut grads)?;
            grads[idx] = Some(dy);
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Matrix>], v: Var, g: Matrix) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    fn propagate(&self, idx: usize, dy: &Matrix, grads: &mut [Option<Matrix>]) -> Result<()> {
        let node = &self.nodes[idx];
        let y = &node.value;
        let exec = self.exec;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if self.requires_grad(*a) {
                    let g = dy.matmul_nt(self.value(*b), exec)?;
                    self.accumulate(grads, *a, g);
                }
                if self.requires_grad(*b) {
                    let g = self.value(*a).matmul_tn(dy, exec)?;
                    self.accumulate(grads, *b, g);
                }
            }
            Op::MatMulNT(a, b) => {
                if self.requires_grad(*a) {
                    let g = dy.matmul(self.value(*b), exec)?;
                    self.accumulate(grads, *a, g);
                }
                if self.requires_grad(*b) {
                    let g = dy.matmul_tn(self.value(*a), exec)?;
                    self.accumulate(grads, *b, g);
                }
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, dy.clone());
                self.accumulate(grads, *b, dy.clone());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, dy.clone());
                self.accumulate(grads, *b, dy.map(|v| -v));
            }
            Op::Mul(a, b) => {
                let (x, z) = (self.value(*a), self.value(*b));
                if self.requires_grad(*a) {
                    let data = dy.data().iter().zip(z.data()).map(|(d, q)| d * q).collect();
                    self.accumulate(grads, *a, Matrix::from_vec(dy.rows(), dy.cols(), data)?);
                }
                if self.requires_grad(*b) {
                    let data = dy.data().iter().zip(x.data()).map(|(d, p)| d * p).collect();
                    self.accumulate(grads, *b, Matrix::from_vec(dy.rows(), dy.cols(), data)?);
                }
            }
            Op::AddRow(a, row) => {
                self.accumulate(grads, *a, dy.clone());
                if self.requires_grad(*row) {
                    let mut g = Matrix::zeros(1, dy.cols());
                    for r in dy.row_iter() {
                        for (o, v) in g.row_mut(0).iter_mut().zip(r) {
                            *o += v;
                        }
                    }
                    self.accumulate(grads, *row, g);
                }
            }
            Op::Scale(a, s) => self.accumulate(grads, *a, dy.map(|v| v * s)),
            Op::Tanh(a) => {
                let data = dy.data().iter().zip(y.data()).map(|(d, t)| d * (1.0 - t * t)).collect();
                self.accumulate(grads, *a, Matrix::from_vec(dy.rows(), dy.cols(), data)?);
            }
            Op::Exp(a) => {
                let data = dy.data().iter().zip(y.data()).map(|(d, e)| d * e).collect();
                self.accumulate(grads, *a, Matrix::from_vec(dy.rows(), dy.cols(), data)?);
            }
            Op::Square(a) => {
                let x = self.value(*a);
                let data = dy.data().iter().zip(x.data()).map(|(d, p)| 2.0 * d * p).collect();
                self.accumulate(grads, *a, Matrix::from_vec(dy.rows(), dy.cols(), data)?);
            }
            Op::SegmentMean(a, segments) => {
                let x = self.value(*a);
                let mut g = Matrix::zeros(x.rows(), x.cols());
                for (s, &(start, len)) in segments.iter().enumerate() {
                    let inv = 1.0 / len as f64;
                    let d = dy.row(s);
                    for r in start..start + len {
                        for (o, v) in g.row_mut(r).iter_mut().zip(d) {
                            *o += v * inv;
                        }
                    }
                }
                self.accumulate(grads, *a, g);
            }
            Op::NormalizeRows(a, norms) => {
                let mut g = Matrix::zeros(y.rows(), y.cols());
                for i in 0..y.rows() {
                    let (yr, dr) = (y.row(i), dy.row(i));
                    let proj: f64 = yr.iter().zip(dr).map(|(p, q)| p * q).sum();
                    let n = norms[i];
                    for ((o, &yv), &dv) in g.row_mut(i).iter_mut().zip(yr).zip(dr) {
                        *o = (dv - yv * proj) / n;
                    }
                }
                self.accumulate(grads, *a, g);
            }
            Op::LogSoftmaxRows(a) => {
                let mut g = Matrix::zeros(y.rows(), y.cols());
                for i in 0..y.rows() {
                    let (yr, dr) = (y.row(i), dy.row(i));
                    let total: f64 = dr.iter().sum();
                    for ((o, &lp), &dv) in g.row_mut(i).iter_mut().zip(yr).zip(dr) {
                        *o = dv - lp.exp() * total;
                    }
                }
                self.accumulate(grads, *a, g);
            }
            Op::CausalSoftmax(a) => {
                let n = y.rows();
                let mut g = Matrix::zeros(n, n);
                for i in 0..n {
                    let (pr, dr) = (&y.row(i)[..=i], &dy.row(i)[..=i]);
                    let inner: f64 = pr.iter().zip(dr).map(|(p, d)| p * d).sum();
                    for j in 0..=i {
                        g.set(i, j, pr[j] * (dr[j] - inner));
                    }
                }
                self.accumulate(grads, *a, g);
            }
            Op::Pick(a, idx) => {
                let x = self.value(*a);
                let mut g = Matrix::zeros(x.rows(), x.cols());
                for (i, &j) in idx.iter().enumerate() {
                    g.set(i, j, dy.get(i, 0));
                }
                self.accumulate(grads, *a, g);
            }
            Op::GatherRows(table, idx) => {
                if self.requires_grad(*table) {
                    let t = self.value(*table);
                    let mut g = Matrix::zeros(t.rows(), t.cols());
                    for (r, &i) in idx.iter().enumerate() {
                        for (o, v) in g.row_mut(i).iter_mut().zip(dy.row(r)) {
                            *o += v;
                        }
                    }
                    self.accumulate(grads, *table, g);
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let rows = self.value(p).rows();
                    if self.requires_grad(p) {
                        self.accumulate(grads, p, dy.slice_rows(offset, rows));
                    }
                    offset += rows;
                }
            }
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let cols = self.value(p).cols();
                    if self.requires_grad(p) {
                        let mut g = Matrix::zeros(dy.rows(), cols);
                        for r in 0..dy.rows() {
                            g.row_mut(r).copy_from_slice(&dy.row(r)[offset..offset + cols]);
                        }
                        self.accumulate(grads, p, g);
                    }
                    offset += cols;
                }
            }
            Op::SliceRows(a, start) => {
                let x = self.value(*a);
                let mut g = Matrix::zeros(x.rows(), x.cols());
                for r in 0..dy.rows() {
                    g.row_mut(start + r).copy_from_slice(dy.row(r));
                }
                self.accumulate(grads, *a, g);
            }
            Op::SliceCols(a, start) => {
                let x = self.value(*a);
                let mut g = Matrix::zeros(x.rows(), x.cols());
                for r in 0..dy.rows() {
                    g.row_mut(r)[*start..start + dy.cols()].copy_from_slice(dy.row(r));
                }
                self.accumulate(grads, *a, g);
            }
            Op::Transpose(a) => self.accumulate(grads, *a, dy.transpose()),
            Op::Sum(a) => {
                let x = self.value(*a);
                self.accumulate(grads, *a, Matrix::filled(x.rows(), x.cols(), dy.item()));
            }
            Op::Mean(a) => {
                let x = self.value(*a);
                let v = dy.item() / x.len() as f64;
                self.accumulate(grads, *a, Matrix::filled(x.rows(), x.cols(), v));
            }
            Op::MaskedMean(a, mask) => {
                let x = self.value(*a);
                let count = mask.iter().filter(|&&m| m).count() as f64;
                let v = dy.item() / count;
                let data = mask.iter().map(|&m| if m { v } else { 0.0 }).collect();
                self.accumulate(grads, *a, Matrix::from_vec(x.rows(), x.cols(), data)?);
            }
        }
        Ok(())
    }
}

/// Central finite-difference derivative of `f` with respect to every
/// listed coordinate of `inputs[which]`.
pub fn finite_difference<F>(inputs: &[Matrix], which: usize, coords: &[usize], step: f64, f: F) -> Result<Vec<f64>>
where
    F: Fn(&[Matrix]) -> Result<f64>,
{
    let mut work = inputs.to_vec();
    let mut out = Vec::with_capacity(coords.len());
    for &c in coords {
        let orig = work[which].data()[c];
        work[which].data_mut()[c] = orig + step;
        let plus = f(&work)?;
        work[which].data_mut()[c] = orig - step;
        let minus = f(&work)?;
        work[which].data_mut()[c] = orig;
        out.push((plus - minus) / (2.0 * step));
    }
    Ok(out)
}

/// Relative error used by every gradient check in the crate.
///
/// The floor keeps coordinates whose true derivative is ~0 from failing
/// on round-off alone.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}
