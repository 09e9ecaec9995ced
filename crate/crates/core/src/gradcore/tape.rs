use std::collections::BTreeMap;

use super::Tensor;
use crate::error::{Error, Result};

/// Handle to a node recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    AddBias(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Sigmoid(Var),
    Tanh(Var),
    MeanRows(Var),
    MeanRowGroups(Var, usize),
    L2NormalizeRows(Var),
    LogSumExpRows(Var),
    GatherRows(Var, Vec<usize>),
    GatherCols(Var, Vec<Vec<usize>>),
    WeightedSum(Var, Vec<f64>),
    Reshape(Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Gradients of a scalar with respect to every trainable leaf.
#[derive(Debug, Default, Clone)]
pub struct Gradients {
    grads: BTreeMap<Var, Tensor>,
}

impl Gradients {
    pub fn get(&self, var: Var) -> Option<&Tensor> {
        self.grads.get(&var)
    }

    pub fn take(&mut self, var: Var) -> Option<Tensor> {
        self.grads.remove(&var)
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }
}

/// Operation record for reverse-mode differentiation.
///
/// Nodes are appended in evaluation order, so the record is always a valid
/// topological order.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
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

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push_leaf(value, true)
    }

    /// Leaf that receives no gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push_leaf(value, false)
    }

    fn push_leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, name: &'static str, value: Tensor, op: Op) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite { op: name });
        }
        let requires_grad = self.inputs(&op).iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn inputs(&self, op: &Op) -> Vec<Var> {
        match *op {
            Op::Leaf => vec![],
            Op::MatMul(a, b) | Op::AddBias(a, b) | Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) => {
                vec![a, b]
            }
            Op::Transpose(a)
            | Op::Scale(a, _)
            | Op::Relu(a)
            | Op::Sigmoid(a)
            | Op::Tanh(a)
            | Op::MeanRows(a)
            | Op::MeanRowGroups(a, _)
            | Op::L2NormalizeRows(a)
            | Op::LogSumExpRows(a)
            | Op::GatherRows(a, _)
            | Op::GatherCols(a, _)
            | Op::WeightedSum(a, _)
            | Op::Reshape(a) => vec![a],
        }
    }

    fn matrix(&self, op: &'static str, v: Var) -> Result<&Tensor> {
        let t = self.value(v);
        if !t.is_matrix() {
            return Err(Error::Dimension {
                op,
                left: t.shape().to_vec(),
                right: vec![],
            });
        }
        Ok(t)
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(Error::Dimension {
                op,
                left: ta.shape().to_vec(),
                right: tb.shape().to_vec(),
            });
        }
        Ok(())
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        self.push("matmul", out, Op::MatMul(a, b))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let out = self.matrix("transpose", a)?.transpose();
        self.push("transpose", out, Op::Transpose(a))
    }

    /// Adds the vector `bias` to every row of the matrix `x`.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let tx = self.matrix("add_bias", x)?;
        let tb = self.value(bias);
        if tb.shape() != [tx.cols()] {
            return Err(Error::Dimension {
                op: "add_bias",
                left: tx.shape().to_vec(),
                right: tb.shape().to_vec(),
            });
        }
        let c = tx.cols();
        let data = tx
            .data()
            .iter()
            .enumerate()
            .map(|(k, x)| x + tb.data()[k % c])
            .collect();
        let out = Tensor::new(tx.shape().to_vec(), data)?;
        self.push("add_bias", out, Op::AddBias(x, bias))
    }

    fn zip(&mut self, name: &'static str, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op) -> Result<Var> {
        self.same_shape(name, a, b)?;
        let (ta, tb) = (self.value(a), self.value(b));
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| f(*x, *y)).collect();
        let out = Tensor::new(ta.shape().to_vec(), data)?;
        self.push(name, out, op)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    fn map(&mut self, name: &'static str, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Result<Var> {
        let ta = self.value(a);
        let out = Tensor::new(ta.shape().to_vec(), ta.data().iter().map(|x| f(*x)).collect())?;
        self.push(name, out, op)
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Result<Var> {
        self.map("scale", a, |x| k * x, Op::Scale(a, k))
    }

    /// `max(0, x)`, with subgradient 0 at the kink.
    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.map("relu", a, |x| if x > 0.0 { x } else { 0.0 }, Op::Relu(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.map("sigmoid", a, sigmoid, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.map("tanh", a, f64::tanh, Op::Tanh(a))
    }

    /// Column means of an `r x c` matrix, as a length-`c` vector.
    pub fn mean_rows(&mut self, x: Var) -> Result<Var> {
        let t = self.matrix("mean_rows", x)?;
        let (r, c) = (t.rows(), t.cols());
        if r == 0 {
            return Err(Error::EmptyInput("mean_rows"));
        }
        let mut out = vec![0.0; c];
        for i in 0..r {
            for (o, v) in out.iter_mut().zip(t.row(i)) {
                *o += v;
            }
        }
        out.iter_mut().for_each(|o| *o /= r as f64);
        self.push("mean_rows", Tensor::vector(out), Op::MeanRows(x))
    }

    /// Averages consecutive blocks of `group` rows: `[g*n x c] -> [n x c]`.
    pub fn mean_row_groups(&mut self, x: Var, group: usize) -> Result<Var> {
        let t = self.matrix("mean_row_groups", x)?;
        let (r, c) = (t.rows(), t.cols());
        if group == 0 || r == 0 {
            return Err(Error::EmptyInput("mean_row_groups"));
        }
        if r % group != 0 {
            return Err(Error::Dimension {
                op: "mean_row_groups",
                left: t.shape().to_vec(),
                right: vec![group],
            });
        }
        let n = r / group;
        let mut out = vec![0.0; n * c];
        for i in 0..r {
            let dst = &mut out[(i / group) * c..(i / group + 1) * c];
            for (o, v) in dst.iter_mut().zip(t.row(i)) {
                *o += v;
            }
        }
        out.iter_mut().for_each(|o| *o /= group as f64);
        let out = Tensor::new(vec![n, c], out)?;
        self.push("mean_row_groups", out, Op::MeanRowGroups(x, group))
    }

    /// Scales each row to unit Euclidean norm. Rows with norm at most
    /// `1e-12` are rejected.
    pub fn l2_normalize_rows(&mut self, x: Var) -> Result<Var> {
        let t = self.matrix("l2_normalize_rows", x)?;
        let mut data = Vec::with_capacity(t.len());
        for i in 0..t.rows() {
            let row = t.row(i);
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm <= 1e-12 {
                return Err(Error::DegenerateVector { row: i, norm });
            }
            data.extend(row.iter().map(|v| v / norm));
        }
        let out = Tensor::new(t.shape().to_vec(), data)?;
        self.push("l2_normalize_rows", out, Op::L2NormalizeRows(x))
    }

    /// Cosine similarities between the rows of `u` and the rows of `v`.
    pub fn cosine_matrix(&mut self, u: Var, v: Var) -> Result<Var> {
        let (tu, tv) = (self.matrix("cosine_matrix", u)?, self.matrix("cosine_matrix", v)?);
        if tu.cols() != tv.cols() {
            return Err(Error::Dimension {
                op: "cosine_matrix",
                left: tu.shape().to_vec(),
                right: tv.shape().to_vec(),
            });
        }
        let nu = self.l2_normalize_rows(u)?;
        let nv = self.l2_normalize_rows(v)?;
        let nvt = self.transpose(nv)?;
        self.matmul(nu, nvt)
    }

    /// Row-wise `log sum exp`, computed relative to the row maximum.
    pub fn logsumexp_rows(&mut self, x: Var) -> Result<Var> {
        let t = self.matrix("logsumexp_rows", x)?;
        if t.cols() == 0 {
            return Err(Error::EmptyInput("logsumexp_rows"));
        }
        let out: Vec<f64> = (0..t.rows()).map(|i| logsumexp(t.row(i))).collect();
        self.push("logsumexp_rows", Tensor::vector(out), Op::LogSumExpRows(x))
    }

    /// Selects rows of `table` by index; repeats are allowed.
    pub fn gather_rows(&mut self, table: Var, idx: &[usize]) -> Result<Var> {
        let t = self.matrix("gather_rows", table)?;
        let c = t.cols();
        let mut data = Vec::with_capacity(idx.len() * c);
        for &i in idx {
            if i >= t.rows() {
                return Err(Error::Dimension {
                    op: "gather_rows",
                    left: t.shape().to_vec(),
                    right: vec![i],
                });
            }
            data.extend_from_slice(t.row(i));
        }
        let out = Tensor::new(vec![idx.len(), c], data)?;
        self.push("gather_rows", out, Op::GatherRows(table, idx.to_vec()))
    }

    /// Per-row column selection: output row `i` holds `x[i][cols[i][k]]`.
    /// Every row must select the same number of columns.
    pub fn gather_cols(&mut self, x: Var, cols: Vec<Vec<usize>>) -> Result<Var> {
        let t = self.matrix("gather_cols", x)?;
        let k = cols.first().map_or(0, Vec::len);
        if cols.len() != t.rows() || cols.iter().any(|c| c.len() != k || c.iter().any(|&j| j >= t.cols())) {
            return Err(Error::Dimension {
                op: "gather_cols",
                left: t.shape().to_vec(),
                right: vec![cols.len(), k],
            });
        }
        let mut data = Vec::with_capacity(t.rows() * k);
        for (i, picks) in cols.iter().enumerate() {
            data.extend(picks.iter().map(|&j| t.get(i, j)));
        }
        let out = Tensor::new(vec![t.rows(), k], data)?;
        self.push("gather_cols", out, Op::GatherCols(x, cols))
    }

    /// Scalar `sum_i w_i x_i` over all entries of `x`.
    pub fn weighted_sum(&mut self, x: Var, weights: Vec<f64>) -> Result<Var> {
        let t = self.value(x);
        if weights.len() != t.len() {
            return Err(Error::Dimension {
                op: "weighted_sum",
                left: t.shape().to_vec(),
                right: vec![weights.len()],
            });
        }
        let s = t.data().iter().zip(&weights).map(|(x, w)| x * w).sum();
        self.push("weighted_sum", Tensor::scalar(s), Op::WeightedSum(x, weights))
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let n = self.value(x).len();
        self.weighted_sum(x, vec![1.0; n])
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let n = self.value(x).len();
        if n == 0 {
            return Err(Error::EmptyInput("mean"));
        }
        self.weighted_sum(x, vec![1.0 / n as f64; n])
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var> {
        let out = self.value(x).clone().reshape(shape)?;
        self.push("reshape", out, Op::Reshape(x))
    }

    /// Reverse pass from the scalar `loss`. Every trainable leaf receives a
    /// gradient (zeros if the loss does not depend on it) and the tape is
    /// cleared.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients> {
        if self.value(loss).len() != 1 {
            return Err(Error::contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if !self.nodes[i].requires_grad {
                continue;
            }
            if matches!(self.nodes[i].op, Op::Leaf) {
                grads[i] = Some(g);
                continue;
            }
            self.propagate(i, &g, &mut grads);
        }

        let mut out = Gradients::default();
        for (i, node) in self.nodes.iter_mut().enumerate() {
            if node.requires_grad && matches!(node.op, Op::Leaf) {
                let data = grads[i].take().unwrap_or_else(|| vec![0.0; node.value.len()]);
                let shape = node.value.shape().to_vec();
                out.grads.insert(Var(i), Tensor::new(shape, data)?);
            }
        }
        self.nodes.clear();
        Ok(out)
    }

    fn propagate(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[i];
        let y = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let gt = Tensor::new(y.shape().to_vec(), g.to_vec()).expect("grad shape");
                if self.wants(*a) {
                    let ga = gt.matmul(&tb.transpose()).expect("matmul grad");
                    self.accumulate(grads, *a, |k| ga.data()[k]);
                }
                if self.wants(*b) {
                    let gb = ta.transpose().matmul(&gt).expect("matmul grad");
                    self.accumulate(grads, *b, |k| gb.data()[k]);
                }
            }
            Op::Transpose(a) => {
                let gt = Tensor::new(y.shape().to_vec(), g.to_vec()).expect("grad shape").transpose();
                self.accumulate(grads, *a, |k| gt.data()[k]);
            }
            Op::AddBias(x, b) => {
                let c = y.cols();
                self.accumulate(grads, *x, |k| g[k]);
                if self.wants(*b) {
                    let mut gb = vec![0.0; c];
                    for (k, gv) in g.iter().enumerate() {
                        gb[k % c] += gv;
                    }
                    self.accumulate(grads, *b, |k| gb[k]);
                }
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, |k| g[k]);
                self.accumulate(grads, *b, |k| g[k]);
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, |k| g[k]);
                self.accumulate(grads, *b, |k| -g[k]);
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (self.value(*a).data(), self.value(*b).data());
                self.accumulate(grads, *a, |k| g[k] * tb[k]);
                self.accumulate(grads, *b, |k| g[k] * ta[k]);
            }
            Op::Scale(a, s) => self.accumulate(grads, *a, |k| g[k] * s),
            Op::Relu(a) => {
                let x = self.value(*a).data();
                self.accumulate(grads, *a, |k| if x[k] > 0.0 { g[k] } else { 0.0 });
            }
            Op::Sigmoid(a) => {
                let yv = y.data();
                self.accumulate(grads, *a, |k| g[k] * yv[k] * (1.0 - yv[k]));
            }
            Op::Tanh(a) => {
                let yv = y.data();
                self.accumulate(grads, *a, |k| g[k] * (1.0 - yv[k] * yv[k]));
            }
            Op::MeanRows(a) => {
                let t = self.value(*a);
                let (r, c) = (t.rows() as f64, t.cols());
                self.accumulate(grads, *a, |k| g[k % c] / r);
            }
            Op::MeanRowGroups(a, group) => {
                let c = y.cols();
                let per_row = c * group;
                let n = *group as f64;
                self.accumulate(grads, *a, |k| g[(k / per_row) * c + k % c] / n);
            }
            Op::L2NormalizeRows(a) => {
                let x = self.value(*a);
                let c = x.cols();
                let mut gx = vec![0.0; x.len()];
                for r in 0..x.rows() {
                    let xr = x.row(r);
                    let norm = xr.iter().map(|v| v * v).sum::<f64>().sqrt();
                    let yr = y.row(r);
                    let gr = &g[r * c..(r + 1) * c];
                    let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for j in 0..c {
                        gx[r * c + j] = (gr[j] - yr[j] * dot) / norm;
                    }
                }
                self.accumulate(grads, *a, |k| gx[k]);
            }
            Op::LogSumExpRows(a) => {
                let x = self.value(*a);
                let c = x.cols();
                let yv = y.data();
                self.accumulate(grads, *a, |k| g[k / c] * (x.data()[k] - yv[k / c]).exp());
            }
            Op::GatherRows(a, idx) => {
                let t = self.value(*a);
                let c = t.cols();
                let mut gx = vec![0.0; t.len()];
                for (r, &src) in idx.iter().enumerate() {
                    for j in 0..c {
                        gx[src * c + j] += g[r * c + j];
                    }
                }
                self.accumulate(grads, *a, |k| gx[k]);
            }
            Op::GatherCols(a, cols) => {
                let t = self.value(*a);
                let c = t.cols();
                let kk = y.cols();
                let mut gx = vec![0.0; t.len()];
                for (r, picks) in cols.iter().enumerate() {
                    for (m, &j) in picks.iter().enumerate() {
                        gx[r * c + j] += g[r * kk + m];
                    }
                }
                self.accumulate(grads, *a, |k| gx[k]);
            }
            Op::WeightedSum(a, w) => self.accumulate(grads, *a, |k| g[0] * w[k]),
            Op::Reshape(a) => self.accumulate(grads, *a, |k| g[k]),
        }
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn accumulate(&self, grads: &mut [Option<Vec<f64>>], v: Var, f: impl Fn(usize) -> f64) {
        if !self.wants(v) {
            return;
        }
        let n = self.nodes[v.0].value.len();
        match &mut grads[v.0] {
            Some(acc) => acc.iter_mut().enumerate().for_each(|(k, a)| *a += f(k)),
            slot @ None => *slot = Some((0..n).map(f).collect()),
        }
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

pub(crate) fn logsumexp(row: &[f64]) -> f64 {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}
