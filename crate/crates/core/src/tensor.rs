//! Dense row-major `f64` tensors and the forward kernels the graph is built on.

use std::fmt;

use rand::distributions::{Distribution, Uniform};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Lower clamp applied to probabilities before taking a log.
pub const LOG_CLAMP: f64 = 1e-12;

/// A dense n-dimensional array in row-major order.
///
/// An empty shape denotes a scalar holding exactly one value.
#[derive(Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

/// Axis along which a matrix softmax normalizes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Axis {
    /// Each column is a distribution.
    Columns,
    /// Each row is a distribution.
    Rows,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.contains(&0) {
            return Err(Error::domain("tensor", format!("zero-sized dimension in {shape:?}")));
        }
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::domain(
                "tensor",
                format!("shape {shape:?} needs {expected} values, got {}", data.len()),
            ));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn filled(shape: &[usize], value: f64) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; shape.iter().product()],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Tensor {
            shape: Vec::new(),
            data: vec![value],
        }
    }

    pub fn vector(data: Vec<f64>) -> Self {
        assert!(!data.is_empty(), "vector must be non-empty");
        Tensor {
            shape: vec![data.len()],
            data,
        }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Tensor::new(vec![rows, cols], data)
    }

    /// Builds a matrix from row slices.
    pub fn from_rows(rows: &[&[f64]]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::domain("from_rows", "ragged rows"));
        }
        Tensor::matrix(rows.len(), cols, rows.concat())
    }

    /// Entries drawn independently from `U[-bound, bound]`.
    pub fn uniform<R: Rng + ?Sized>(shape: &[usize], bound: f64, rng: &mut R) -> Self {
        let n = shape.iter().product();
        let data = if bound == 0.0 {
            vec![0.0; n]
        } else {
            let dist = Uniform::new_inclusive(-bound, bound);
            (0..n).map(|_| dist.sample(rng)).collect()
        };
        Tensor {
            shape: shape.to_vec(),
            data,
        }
    }

    pub fn eye(n: usize) -> Self {
        let mut t = Tensor::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> f64 {
        assert_eq!(self.data.len(), 1, "item() on tensor of shape {:?}", self.shape);
        self.data[0]
    }

    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    pub fn cols(&self) -> usize {
        match self.shape.len() {
            1 => 1,
            _ => self.shape[1],
        }
    }

    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.shape[1] + j]
    }

    pub fn column(&self, j: usize) -> Tensor {
        let (rows, cols) = (self.shape[0], self.shape[1]);
        Tensor::vector((0..rows).map(|i| self.data[i * cols + j]).collect())
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let cols = self.shape[1..].iter().product::<usize>();
        &self.data[i * cols..(i + 1) * cols]
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        Tensor::new(shape.to_vec(), self.data.clone())
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn check_finite(&self, what: &str) -> Result<()> {
        if self.is_finite() {
            Ok(())
        } else {
            Err(Error::NonFinite(what.to_string()))
        }
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Tensor, op: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        if self.shape != other.shape {
            return Err(Error::shape(op, &self.shape, &other.shape));
        }
        Ok(Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        })
    }

    /// `self += other`, elementwise.
    pub fn add_assign(&mut self, other: &Tensor) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn scale(&self, s: f64) -> Tensor {
        self.map(|v| v * s)
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        assert_eq!(self.shape, other.shape);
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn argmax(&self) -> usize {
        // Lowest index wins ties.
        let mut best = 0;
        for (i, &v) in self.data.iter().enumerate() {
            if v > self.data[best] {
                best = i;
            }
        }
        best
    }
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Tensor{:?}{:?}", self.shape, self.data)
    }
}

pub fn add(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    a.zip_map(b, "add", |x, y| x + y)
}

pub fn sub(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    a.zip_map(b, "sub", |x, y| x - y)
}

pub fn mul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    a.zip_map(b, "mul", |x, y| x * y)
}

pub fn tanh(x: &Tensor) -> Tensor {
    x.map(f64::tanh)
}

pub fn sigmoid(x: &Tensor) -> Tensor {
    x.map(sigmoid_scalar)
}

pub(crate) fn sigmoid_scalar(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

/// Matrix product. `b` may be a matrix `[q, r]` or a vector `[q]`; the result
/// has the matching rank.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.rank() != 2 || !(b.rank() == 1 || b.rank() == 2) || a.shape[1] != b.shape[0] {
        return Err(Error::shape("matmul", &a.shape, &b.shape));
    }
    let (p, q) = (a.shape[0], a.shape[1]);
    let r = b.cols();
    if r == 1 {
        let data = a.data.chunks_exact(q).map(|row| dot(row, &b.data)).collect();
        let shape = if b.rank() == 1 { vec![p] } else { vec![p, 1] };
        return Ok(Tensor { shape, data });
    }
    let mut out = vec![0.0; p * r];
    for i in 0..p {
        let arow = &a.data[i * q..(i + 1) * q];
        let orow = &mut out[i * r..(i + 1) * r];
        for (k, &aik) in arow.iter().enumerate() {
            let brow = &b.data[k * r..(k + 1) * r];
            for (o, &bkj) in orow.iter_mut().zip(brow) {
                *o += aik * bkj;
            }
        }
    }
    let shape = if b.rank() == 1 { vec![p] } else { vec![p, r] };
    Ok(Tensor { shape, data: out })
}

pub fn transpose(a: &Tensor) -> Result<Tensor> {
    if a.rank() != 2 {
        return Err(Error::domain("transpose", format!("expected a matrix, got {:?}", a.shape)));
    }
    let (r, c) = (a.shape[0], a.shape[1]);
    let mut data = vec![0.0; r * c];
    for i in 0..r {
        for j in 0..c {
            data[j * r + i] = a.data[i * c + j];
        }
    }
    Ok(Tensor {
        shape: vec![c, r],
        data,
    })
}

/// `out[k] = hᵀ · t[k] · u`.
///
/// `h` may be a single vector `[d]` (result `[K]`) or a matrix of column vectors
/// `[d, n]` (result `[K, n]`, one column per input column).
pub fn bilinear(h: &Tensor, t: &Tensor, u: &Tensor) -> Result<Tensor> {
    let ku = bilinear_right(t, u)?;
    let d = t.shape[1];
    if h.shape.first() != Some(&d) || h.rank() > 2 {
        return Err(Error::shape("bilinear", &h.shape, &t.shape));
    }
    // [K, d] · [d, n]
    matmul(&ku, h)
}

/// `t[k] · u` stacked into a `[K, d]` matrix.
pub(crate) fn bilinear_right(t: &Tensor, u: &Tensor) -> Result<Tensor> {
    if t.rank() != 3 || t.shape[1] != t.shape[2] {
        return Err(Error::domain("bilinear", format!("expected [K, d, d] tensor, got {:?}", t.shape)));
    }
    if u.rank() != 1 || u.shape[0] != t.shape[2] {
        return Err(Error::shape("bilinear", &t.shape, &u.shape));
    }
    let (k, d) = (t.shape[0], t.shape[1]);
    Ok(Tensor {
        shape: vec![k, d],
        data: t.data.chunks_exact(d).map(|row| dot(row, &u.data)).collect(),
    })
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Max-shifted softmax of a vector.
pub fn softmax(x: &Tensor) -> Result<Tensor> {
    if x.rank() != 1 {
        return Err(Error::domain("softmax", format!("expected a vector, got {:?}", x.shape)));
    }
    Ok(Tensor {
        shape: x.shape.clone(),
        data: softmax_slice(&x.data),
    })
}

pub(crate) fn softmax_slice(x: &[f64]) -> Vec<f64> {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = x.iter().map(|&v| (v - max).exp()).collect();
    let z: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / z).collect()
}

/// Softmax of a matrix along `axis`.
pub fn softmax_axis(x: &Tensor, axis: Axis) -> Result<Tensor> {
    if x.rank() != 2 {
        return Err(Error::domain("softmax", format!("expected a matrix, got {:?}", x.shape)));
    }
    let (r, c) = (x.shape[0], x.shape[1]);
    let mut out = vec![0.0; r * c];
    match axis {
        Axis::Rows => {
            for i in 0..r {
                out[i * c..(i + 1) * c].copy_from_slice(&softmax_slice(&x.data[i * c..(i + 1) * c]));
            }
        }
        Axis::Columns => {
            for j in 0..c {
                let col: Vec<f64> = (0..r).map(|i| x.data[i * c + j]).collect();
                for (i, v) in softmax_slice(&col).into_iter().enumerate() {
                    out[i * c + j] = v;
                }
            }
        }
    }
    Ok(Tensor {
        shape: x.shape.clone(),
        data: out,
    })
}

/// Stacks vectors/matrices with equal trailing dims along the first axis.
pub fn concat_rows(parts: &[&Tensor]) -> Result<Tensor> {
    let first = parts.first().ok_or_else(|| Error::domain("concat", "no inputs"))?;
    let tail = &first.shape[1..];
    let mut rows = 0;
    let mut data = Vec::new();
    for p in parts {
        if p.rank() != first.rank() || &p.shape[1..] != tail {
            return Err(Error::shape("concat", &first.shape, &p.shape));
        }
        rows += p.shape[0];
        data.extend_from_slice(&p.data);
    }
    let mut shape = vec![rows];
    shape.extend_from_slice(tail);
    Ok(Tensor { shape, data })
}

/// Index of the hot entry of a one-hot vector.
pub fn one_hot_index(onehot: &[f64]) -> Option<usize> {
    let mut idx = None;
    for (i, &v) in onehot.iter().enumerate() {
        if v == 1.0 {
            if idx.is_some() {
                return None;
            }
            idx = Some(i);
        } else if v != 0.0 {
            return None;
        }
    }
    idx
}

/// `-ln max(p, 1e-12)`, keeping NaN visible.
pub(crate) fn clamped_neg_log(p: f64) -> f64 {
    if p.is_nan() {
        return f64::NAN;
    }
    -p.max(LOG_CLAMP).ln()
}

/// `-ln max(p[t], 1e-12)` where `t` is the hot index of `onehot`.
pub fn cross_entropy(p: &Tensor, onehot: &Tensor) -> Result<f64> {
    if p.shape != onehot.shape || p.rank() != 1 {
        return Err(Error::shape("cross_entropy", &p.shape, &onehot.shape));
    }
    let t = one_hot_index(&onehot.data)
        .ok_or_else(|| Error::domain("cross_entropy", format!("target {:?} is not one-hot", onehot.data)))?;
    Ok(clamped_neg_log(p.data[t]))
}

/// `Σ_i Z[c, i] · G[i]` for a `[C, m]` combination matrix and `[m, d, d]` basis.
pub fn materialize_slice(z: &Tensor, basis: &Tensor, c: usize) -> Result<Tensor> {
    if z.rank() != 2 || basis.rank() != 3 || z.shape[1] != basis.shape[0] {
        return Err(Error::shape("materialize", &z.shape, &basis.shape));
    }
    if c >= z.shape[0] {
        return Err(Error::domain(
            "materialize",
            format!("category index {c} out of range for {} categories", z.shape[0]),
        ));
    }
    let (m, d) = (basis.shape[0], basis.shape[1]);
    let dd = d * basis.shape[2];
    let mut out = vec![0.0; dd];
    for i in 0..m {
        let w = z.data[c * m + i];
        for (o, &g) in out.iter_mut().zip(&basis.data[i * dd..(i + 1) * dd]) {
            *o += w * g;
        }
    }
    Tensor::new(vec![d, basis.shape[2]], out)
}
