//! Dynamic reverse-mode differentiation over [`Tensor`] values.
//!
//! A [`Graph`] is built fresh for every sentence. Nodes are appended in
//! evaluation order, so node indices are already a topological order and the
//! backward sweep simply walks them in reverse, visiting each node once.

mod gradcheck;
mod param;

use std::collections::HashMap;

pub use gradcheck::{finite_diff_check, GradCheckEntry, GradCheckOptions, GradCheckReport};
pub use param::{Param, ParamId, ParamStore};

use crate::error::{Error, Result};
use crate::tensor::{self, Axis, Tensor, LOG_CLAMP};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    MatMul(NodeId, NodeId),
    Transpose(NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Affine { input: NodeId, scale: f64 },
    Tanh(NodeId),
    Sigmoid(NodeId),
    Softmax(NodeId),
    SoftmaxAxis(NodeId, Axis),
    Concat(Vec<NodeId>),
    Column(NodeId, usize),
    StackCols(Vec<NodeId>),
    Row(NodeId, usize),
    StackRows(Vec<NodeId>),
    Reshape(NodeId),
    Bilinear { h: NodeId, t: NodeId, u: NodeId },
    Materialize { weights: NodeId, basis: NodeId, category: usize },
    Gather { table: NodeId, rows: Vec<usize> },
    CrossEntropy { probs: NodeId, targets: Vec<usize> },
    Sum(NodeId),
    AddN(Vec<NodeId>),
}

#[derive(Clone, Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

/// Gradients of a scalar with respect to every node of a graph.
#[derive(Clone, Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient for `node`, or `None` when the loss does not depend on it.
    pub fn get(&self, node: NodeId) -> Option<&Tensor> {
        self.grads[node.0].as_ref()
    }
}

#[derive(Clone, Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    param_leaves: HashMap<ParamId, NodeId>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    fn push(&mut self, value: Tensor, op: Op) -> NodeId {
        self.nodes.push(Node { value, op });
        NodeId(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.push(value, Op::Leaf)
    }

    /// Leaf for a stored parameter. Repeated requests share one node, so
    /// every use of the parameter feeds the same gradient slot.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> NodeId {
        if let Some(&node) = self.param_leaves.get(&id) {
            return node;
        }
        let node = self.push(store.get(id).value.clone(), Op::Leaf);
        self.param_leaves.insert(id, node);
        node
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = tensor::matmul(self.value(a), self.value(b))?;
        Ok(self.push(v, Op::MatMul(a, b)))
    }

    pub fn transpose(&mut self, a: NodeId) -> Result<NodeId> {
        let v = tensor::transpose(self.value(a))?;
        Ok(self.push(v, Op::Transpose(a)))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = tensor::add(self.value(a), self.value(b))?;
        Ok(self.push(v, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = tensor::sub(self.value(a), self.value(b))?;
        Ok(self.push(v, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = tensor::mul(self.value(a), self.value(b))?;
        Ok(self.push(v, Op::Mul(a, b)))
    }

    /// `scale · x + shift`, elementwise with constant coefficients.
    pub fn affine(&mut self, x: NodeId, scale: f64, shift: f64) -> NodeId {
        let v = self.value(x).map(|e| scale * e + shift);
        self.push(v, Op::Affine { input: x, scale })
    }

    pub fn scale(&mut self, x: NodeId, s: f64) -> NodeId {
        self.affine(x, s, 0.0)
    }

    pub fn tanh(&mut self, x: NodeId) -> NodeId {
        let v = tensor::tanh(self.value(x));
        self.push(v, Op::Tanh(x))
    }

    pub fn sigmoid(&mut self, x: NodeId) -> NodeId {
        let v = tensor::sigmoid(self.value(x));
        self.push(v, Op::Sigmoid(x))
    }

    pub fn softmax(&mut self, x: NodeId) -> Result<NodeId> {
        if self.value(x).is_empty() {
            return Err(Error::domain("softmax", "empty input"));
        }
        let v = tensor::softmax(self.value(x))?;
        Ok(self.push(v, Op::Softmax(x)))
    }

    pub fn softmax_axis(&mut self, x: NodeId, axis: Axis) -> Result<NodeId> {
        let v = tensor::softmax_axis(self.value(x), axis)?;
        Ok(self.push(v, Op::SoftmaxAxis(x, axis)))
    }

    /// Concatenation along the first axis.
    pub fn concat(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        let values: Vec<&Tensor> = parts.iter().map(|&p| self.value(p)).collect();
        let v = tensor::concat_rows(&values)?;
        Ok(self.push(v, Op::Concat(parts.to_vec())))
    }

    pub fn column(&mut self, x: NodeId, j: usize) -> Result<NodeId> {
        let t = self.value(x);
        if t.rank() != 2 || j >= t.cols() {
            return Err(Error::domain("column", format!("column {j} of {:?}", t.shape())));
        }
        let v = t.column(j);
        Ok(self.push(v, Op::Column(x, j)))
    }

    /// Places equal-length vectors side by side as the columns of a matrix.
    pub fn stack_cols(&mut self, cols: &[NodeId]) -> Result<NodeId> {
        let first = cols.first().ok_or_else(|| Error::domain("stack_cols", "no inputs"))?;
        let r = self.value(*first).len();
        let n = cols.len();
        let mut data = vec![0.0; r * n];
        for (j, &c) in cols.iter().enumerate() {
            let col = self.value(c);
            if col.rank() != 1 || col.len() != r {
                return Err(Error::shape("stack_cols", self.value(*first).shape(), col.shape()));
            }
            for (i, &v) in col.data().iter().enumerate() {
                data[i * n + j] = v;
            }
        }
        let v = Tensor::matrix(r, n, data)?;
        Ok(self.push(v, Op::StackCols(cols.to_vec())))
    }

    /// Row `i` of a matrix, as a vector.
    pub fn row(&mut self, x: NodeId, i: usize) -> Result<NodeId> {
        let t = self.value(x);
        if t.rank() != 2 || i >= t.rows() {
            return Err(Error::domain("row", format!("row {i} of {:?}", t.shape())));
        }
        let v = Tensor::vector(t.row(i).to_vec());
        Ok(self.push(v, Op::Row(x, i)))
    }

    /// Flattens each input into one row of an `[N, len]` matrix.
    pub fn stack_rows(&mut self, rows: &[NodeId]) -> Result<NodeId> {
        let first = rows.first().ok_or_else(|| Error::domain("stack_rows", "no inputs"))?;
        let len = self.value(*first).len();
        let mut data = Vec::with_capacity(len * rows.len());
        for &r in rows {
            let t = self.value(r);
            if t.len() != len {
                return Err(Error::shape("stack_rows", self.value(*first).shape(), t.shape()));
            }
            data.extend_from_slice(t.data());
        }
        let v = Tensor::matrix(rows.len(), len, data)?;
        Ok(self.push(v, Op::StackRows(rows.to_vec())))
    }

    pub fn reshape(&mut self, x: NodeId, shape: &[usize]) -> Result<NodeId> {
        let v = self.value(x).reshape(shape)?;
        Ok(self.push(v, Op::Reshape(x)))
    }

    /// `out[k, j] = h[:, j]ᵀ · t[k] · u`; see [`tensor::bilinear`].
    pub fn bilinear(&mut self, h: NodeId, t: NodeId, u: NodeId) -> Result<NodeId> {
        let v = tensor::bilinear(self.value(h), self.value(t), self.value(u))?;
        Ok(self.push(v, Op::Bilinear { h, t, u }))
    }

    /// Category `c`'s `[K, d, d]` tensor from `[K, C, m]` combination weights
    /// and a `[K, m, d, d]` shared basis: `out[k] = Σ_i w[k, c, i] · basis[k, i]`.
    pub fn materialize(&mut self, weights: NodeId, basis: NodeId, category: usize) -> Result<NodeId> {
        let (w, b) = (self.value(weights), self.value(basis));
        if w.rank() != 3 || b.rank() != 4 || w.shape()[0] != b.shape()[0] || w.shape()[2] != b.shape()[1] {
            return Err(Error::shape("materialize", w.shape(), b.shape()));
        }
        let (k, c_count, m) = (w.shape()[0], w.shape()[1], w.shape()[2]);
        if category >= c_count {
            return Err(Error::domain(
                "materialize",
                format!("category {category} out of range for {c_count} categories"),
            ));
        }
        let (d1, d2) = (b.shape()[2], b.shape()[3]);
        let dd = d1 * d2;
        let mut out = vec![0.0; k * dd];
        for kk in 0..k {
            let o = &mut out[kk * dd..(kk + 1) * dd];
            for i in 0..m {
                let coef = w.data()[(kk * c_count + category) * m + i];
                let slice = &b.data()[(kk * m + i) * dd..(kk * m + i + 1) * dd];
                for (x, &g) in o.iter_mut().zip(slice) {
                    *x += coef * g;
                }
            }
        }
        let v = Tensor::new(vec![k, d1, d2], out)?;
        Ok(self.push(v, Op::Materialize { weights, basis, category }))
    }

    /// Columns `out[:, j] = table[rows[j], :]` from an `[N, D]` table.
    pub fn gather(&mut self, table: NodeId, rows: &[usize]) -> Result<NodeId> {
        let t = self.value(table);
        if t.rank() != 2 {
            return Err(Error::domain("gather", format!("table must be a matrix, got {:?}", t.shape())));
        }
        if rows.is_empty() {
            return Err(Error::domain("gather", "no rows requested"));
        }
        let (n_rows, dim) = (t.rows(), t.cols());
        let n = rows.len();
        let mut data = vec![0.0; dim * n];
        for (j, &r) in rows.iter().enumerate() {
            if r >= n_rows {
                return Err(Error::domain("gather", format!("row {r} out of range for {n_rows}")));
            }
            for (a, &v) in t.row(r).iter().enumerate() {
                data[a * n + j] = v;
            }
        }
        let v = Tensor::matrix(dim, n, data)?;
        Ok(self.push(v, Op::Gather { table, rows: rows.to_vec() }))
    }

    /// Clamped cross-entropy against a one-hot target.
    ///
    /// `probs` is a probability vector with a one-hot `target` vector, or a
    /// matrix whose columns are distributions with a matching matrix of one-hot
    /// columns; the column losses are summed.
    pub fn cross_entropy(&mut self, probs: NodeId, target: &Tensor) -> Result<NodeId> {
        let p = self.value(probs);
        if p.shape() != target.shape() || p.rank() > 2 {
            return Err(Error::shape("cross_entropy", p.shape(), target.shape()));
        }
        let targets: Vec<usize> = if p.rank() == 1 {
            vec![tensor::one_hot_index(target.data())
                .ok_or_else(|| Error::domain("cross_entropy", "target is not one-hot"))?]
        } else {
            (0..target.cols())
                .map(|j| {
                    tensor::one_hot_index(target.column(j).data())
                        .ok_or_else(|| Error::domain("cross_entropy", format!("target column {j} is not one-hot")))
                })
                .collect::<Result<_>>()?
        };
        let loss: f64 = targets
            .iter()
            .enumerate()
            .map(|(j, &t)| tensor::clamped_neg_log(prob_at(p, t, j)))
            .sum();
        Ok(self.push(Tensor::scalar(loss), Op::CrossEntropy { probs, targets }))
    }

    pub fn sum(&mut self, x: NodeId) -> NodeId {
        let v = Tensor::scalar(self.value(x).sum());
        self.push(v, Op::Sum(x))
    }

    /// Elementwise sum of equally shaped nodes.
    pub fn add_n(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        let first = parts.first().ok_or_else(|| Error::domain("add_n", "no inputs"))?;
        let mut acc = self.value(*first).clone();
        for &p in &parts[1..] {
            let v = self.value(p);
            if v.shape() != acc.shape() {
                return Err(Error::shape("add_n", acc.shape(), v.shape()));
            }
            acc.add_assign(v);
        }
        Ok(self.push(acc, Op::AddN(parts.to_vec())))
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn gradients(&self, loss: NodeId) -> Result<Gradients> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(Error::Contract(format!(
                "backward requires a scalar loss, got shape {:?}",
                lv.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::filled(lv.shape(), 1.0));
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        Ok(Gradients { grads })
    }

    /// Accumulates `dloss/dparam` into the gradient buffer of every trainable
    /// parameter reachable from `loss`.
    pub fn backward(&self, loss: NodeId, store: &mut ParamStore) -> Result<Gradients> {
        let grads = self.gradients(loss)?;
        for (&pid, &node) in &self.param_leaves {
            let param = store.get_mut(pid);
            if !param.trainable {
                continue;
            }
            if let Some(g) = grads.get(node) {
                param.grad.add_assign(g);
            }
        }
        Ok(grads)
    }

    fn propagate(&self, i: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let node = &self.nodes[i];
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (p, q) = (av.shape()[0], av.shape()[1]);
                let r = bv.cols();
                let mut ga = vec![0.0; p * q];
                let mut gb = vec![0.0; q * r];
                let (ad, bd, gd) = (av.data(), bv.data(), g.data());
                for ii in 0..p {
                    for k in 0..q {
                        let aik = ad[ii * q + k];
                        let mut s = 0.0;
                        for j in 0..r {
                            let gij = gd[ii * r + j];
                            s += gij * bd[k * r + j];
                            gb[k * r + j] += aik * gij;
                        }
                        ga[ii * q + k] = s;
                    }
                }
                accumulate(grads, *a, av.shape(), ga);
                accumulate(grads, *b, bv.shape(), gb);
            }
            Op::Transpose(a) => {
                let gt = tensor::transpose(g).expect("transpose of matrix gradient");
                accumulate(grads, *a, self.value(*a).shape(), gt.into_data());
            }
            Op::Add(a, b) => {
                accumulate(grads, *a, g.shape(), g.data().to_vec());
                accumulate(grads, *b, g.shape(), g.data().to_vec());
            }
            Op::Sub(a, b) => {
                accumulate(grads, *a, g.shape(), g.data().to_vec());
                accumulate(grads, *b, g.shape(), g.data().iter().map(|v| -v).collect());
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let ga = g.data().iter().zip(bv.data()).map(|(x, y)| x * y).collect();
                let gb = g.data().iter().zip(av.data()).map(|(x, y)| x * y).collect();
                accumulate(grads, *a, g.shape(), ga);
                accumulate(grads, *b, g.shape(), gb);
            }
            Op::Affine { input, scale } => {
                accumulate(grads, *input, g.shape(), g.data().iter().map(|v| v * scale).collect());
            }
            Op::Tanh(a) => {
                let y = node.value.data();
                let ga = g.data().iter().zip(y).map(|(gv, yv)| gv * (1.0 - yv * yv)).collect();
                accumulate(grads, *a, g.shape(), ga);
            }
            Op::Sigmoid(a) => {
                let y = node.value.data();
                let ga = g.data().iter().zip(y).map(|(gv, yv)| gv * yv * (1.0 - yv)).collect();
                accumulate(grads, *a, g.shape(), ga);
            }
            Op::Softmax(a) => {
                let ga = softmax_backward(node.value.data(), g.data());
                accumulate(grads, *a, g.shape(), ga);
            }
            Op::SoftmaxAxis(a, axis) => {
                let y = &node.value;
                let (r, c) = (y.rows(), y.cols());
                let mut ga = vec![0.0; r * c];
                match axis {
                    Axis::Rows => {
                        for ii in 0..r {
                            let s = ii * c..(ii + 1) * c;
                            ga[s.clone()].copy_from_slice(&softmax_backward(&y.data()[s.clone()], &g.data()[s]));
                        }
                    }
                    Axis::Columns => {
                        for j in 0..c {
                            let yc: Vec<f64> = (0..r).map(|ii| y.at(ii, j)).collect();
                            let gc: Vec<f64> = (0..r).map(|ii| g.at(ii, j)).collect();
                            for (ii, v) in softmax_backward(&yc, &gc).into_iter().enumerate() {
                                ga[ii * c + j] = v;
                            }
                        }
                    }
                }
                accumulate(grads, *a, g.shape(), ga);
            }
            Op::Concat(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let pv = self.value(p);
                    let len = pv.len();
                    accumulate(grads, p, pv.shape(), g.data()[offset..offset + len].to_vec());
                    offset += len;
                }
            }
            Op::Column(a, j) => {
                let av = self.value(*a);
                let c = av.cols();
                let mut ga = vec![0.0; av.len()];
                for (ii, &v) in g.data().iter().enumerate() {
                    ga[ii * c + j] = v;
                }
                accumulate(grads, *a, av.shape(), ga);
            }
            Op::StackCols(cols) => {
                for (j, &col) in cols.iter().enumerate() {
                    accumulate(grads, col, self.value(col).shape(), g.column(j).into_data());
                }
            }
            Op::Row(a, r) => {
                let av = self.value(*a);
                let c = av.cols();
                let mut ga = vec![0.0; av.len()];
                ga[r * c..(r + 1) * c].copy_from_slice(g.data());
                accumulate(grads, *a, av.shape(), ga);
            }
            Op::StackRows(rows) => {
                for (ii, &row) in rows.iter().enumerate() {
                    accumulate(grads, row, self.value(row).shape(), g.row(ii).to_vec());
                }
            }
            Op::Reshape(a) => {
                accumulate(grads, *a, self.value(*a).shape(), g.data().to_vec());
            }
            Op::Bilinear { h, t, u } => self.bilinear_backward(*h, *t, *u, g, grads),
            Op::Materialize { weights, basis, category } => {
                let (w, b) = (self.value(*weights), self.value(*basis));
                let (k, c_count, m) = (w.shape()[0], w.shape()[1], w.shape()[2]);
                let dd = b.shape()[2] * b.shape()[3];
                let mut gw = vec![0.0; w.len()];
                let mut gb = vec![0.0; b.len()];
                for kk in 0..k {
                    let gk = &g.data()[kk * dd..(kk + 1) * dd];
                    for i in 0..m {
                        let widx = (kk * c_count + category) * m + i;
                        let boff = (kk * m + i) * dd;
                        let slice = &b.data()[boff..boff + dd];
                        gw[widx] = gk.iter().zip(slice).map(|(x, y)| x * y).sum();
                        let coef = w.data()[widx];
                        for (gbv, &gv) in gb[boff..boff + dd].iter_mut().zip(gk) {
                            *gbv = coef * gv;
                        }
                    }
                }
                accumulate(grads, *weights, w.shape(), gw);
                accumulate(grads, *basis, b.shape(), gb);
            }
            Op::Gather { table, rows } => {
                let tv = self.value(*table);
                let dim = tv.cols();
                let n = rows.len();
                let mut gt = vec![0.0; tv.len()];
                for (j, &r) in rows.iter().enumerate() {
                    for a in 0..dim {
                        gt[r * dim + a] += g.data()[a * n + j];
                    }
                }
                accumulate(grads, *table, tv.shape(), gt);
            }
            Op::CrossEntropy { probs, targets } => {
                let p = self.value(*probs);
                let upstream = g.item();
                let mut gp = vec![0.0; p.len()];
                for (j, &t) in targets.iter().enumerate() {
                    let pv = prob_at(p, t, j);
                    if pv > LOG_CLAMP {
                        let idx = if p.rank() == 1 { t } else { t * p.cols() + j };
                        gp[idx] = -upstream / pv;
                    }
                }
                accumulate(grads, *probs, p.shape(), gp);
            }
            Op::Sum(a) => {
                let av = self.value(*a);
                accumulate(grads, *a, av.shape(), vec![g.item(); av.len()]);
            }
            Op::AddN(parts) => {
                for &p in parts {
                    accumulate(grads, p, g.shape(), g.data().to_vec());
                }
            }
        }
    }

    fn bilinear_backward(&self, h: NodeId, t: NodeId, u: NodeId, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let (hv, tv, uv) = (self.value(h), self.value(t), self.value(u));
        let (k, d) = (tv.shape()[0], tv.shape()[1]);
        let n = hv.cols();
        let w = tensor::bilinear_right(tv, uv).expect("validated in forward");
        let (hd, td, ud, wd, gd) = (hv.data(), tv.data(), uv.data(), w.data(), g.data());
        // gw = g · hᵀ  [K, d];  gh = wᵀ · g  [d, n]
        let mut gw = vec![0.0; k * d];
        let mut gh = vec![0.0; d * n];
        for kk in 0..k {
            for a in 0..d {
                let mut s = 0.0;
                let wka = wd[kk * d + a];
                for j in 0..n {
                    let gkj = gd[kk * n + j];
                    s += gkj * hd[a * n + j];
                    gh[a * n + j] += wka * gkj;
                }
                gw[kk * d + a] = s;
            }
        }
        let mut gt = vec![0.0; tv.len()];
        let mut gu = vec![0.0; d];
        for kk in 0..k {
            for a in 0..d {
                let gwa = gw[kk * d + a];
                let off = (kk * d + a) * d;
                for b in 0..d {
                    gt[off + b] = gwa * ud[b];
                    gu[b] += gwa * td[off + b];
                }
            }
        }
        accumulate(grads, h, hv.shape(), gh);
        accumulate(grads, t, tv.shape(), gt);
        accumulate(grads, u, uv.shape(), gu);
    }
}

fn prob_at(p: &Tensor, t: usize, j: usize) -> f64 {
    if p.rank() == 1 {
        p.data()[t]
    } else {
        p.at(t, j)
    }
}

fn softmax_backward(y: &[f64], g: &[f64]) -> Vec<f64> {
    let dot: f64 = y.iter().zip(g).map(|(a, b)| a * b).sum();
    y.iter().zip(g).map(|(yv, gv)| yv * (gv - dot)).collect()
}

fn accumulate(grads: &mut [Option<Tensor>], node: NodeId, shape: &[usize], data: Vec<f64>) {
    match &mut grads[node.0] {
        Some(existing) => {
            for (a, b) in existing.data_mut().iter_mut().zip(&data) {
                *a += b;
            }
        }
        slot @ None => {
            *slot = Some(Tensor::new(shape.to_vec(), data).expect("gradient matches node shape"));
        }
    }
}
