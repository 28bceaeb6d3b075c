//! Dense row-major matrices and tensors with mode-k unfolding, folding,
//! mode-k products and the mode-k Gram operator.
//!
//! Modes are 0-based throughout the library. The column index of
//! `unfold(X, k)` enumerates the remaining indices
//! `(i_0, .., i_{k-1}, i_{k+1}, .., i_{d-1})` with the last one varying
//! fastest, so a mode-k unfolding is a pure reshuffle of the row-major
//! buffer viewed as `left × n_k × right`.

use serde::{Deserialize, Serialize};

use crate::error::{GatsError, Result};

/// Largest supported tensor order.
pub const MAX_ORDER: usize = 8;

fn check_finite(data: &[f64]) -> Result<()> {
    match data.iter().position(|v| !v.is_finite()) {
        Some(i) => Err(GatsError::NonFinite(i)),
        None => Ok(()),
    }
}

/// A dense real matrix stored row-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(GatsError::ShapeMismatch(format!(
                "matrix dimensions must be positive, got {rows}x{cols}"
            )));
        }
        if rows * cols != data.len() {
            return Err(GatsError::ShapeMismatch(format!(
                "{rows}x{cols} matrix needs {} entries, got {}",
                rows * cols,
                data.len()
            )));
        }
        check_finite(&data)?;
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        assert!(rows > 0 && cols > 0, "matrix dimensions must be positive");
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_diag(diag: &[f64]) -> Self {
        let n = diag.len();
        let mut m = Self::zeros(n, n);
        for (i, &d) in diag.iter().enumerate() {
            m.data[i * n + i] = d;
        }
        m
    }

    /// Builds a matrix from a closure `f(i, j)`. Panics on non-finite output.
    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self::new(rows, cols, data).expect("from_fn produced an invalid matrix")
    }

    /// Assembles a matrix from equally long columns.
    pub fn from_columns(columns: &[Vec<f64>]) -> Result<Self> {
        let cols = columns.len();
        let rows = columns.first().map(Vec::len).unwrap_or(0);
        if columns.iter().any(|c| c.len() != rows) {
            return Err(GatsError::ShapeMismatch("ragged columns".into()));
        }
        let mut data = vec![0.0; rows * cols];
        for (j, c) in columns.iter().enumerate() {
            for (i, &v) in c.iter().enumerate() {
                data[i * cols + j] = v;
            }
        }
        Self::new(rows, cols, data)
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self.get(i, j)).collect()
    }

    /// The first `k` columns.
    pub fn leading_columns(&self, k: usize) -> DenseMatrix {
        assert!(k >= 1 && k <= self.cols);
        DenseMatrix::from_fn(self.rows, k, |i, j| self.get(i, j))
    }

    pub fn transpose(&self) -> DenseMatrix {
        let mut out = vec![0.0; self.data.len()];
        for i in 0..self.rows {
            for j in 0..self.cols {
                out[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        DenseMatrix {
            rows: self.cols,
            cols: self.rows,
            data: out,
        }
    }

    /// `self · other`.
    pub fn matmul(&self, other: &DenseMatrix) -> Result<DenseMatrix> {
        if self.cols != other.rows {
            return Err(GatsError::ShapeMismatch(format!(
                "cannot multiply {}x{} by {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let (m, n) = (self.rows, other.cols);
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let orow = &mut out[i * n..(i + 1) * n];
            for (p, &a) in self.row(i).iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                for (o, &b) in orow.iter_mut().zip(other.row(p)) {
                    *o += a * b;
                }
            }
        }
        Ok(DenseMatrix {
            rows: m,
            cols: n,
            data: out,
        })
    }

    /// `selfᵀ · other` without materializing the transpose.
    pub fn t_matmul(&self, other: &DenseMatrix) -> Result<DenseMatrix> {
        if self.rows != other.rows {
            return Err(GatsError::ShapeMismatch(format!(
                "cannot form AᵀB for A {}x{} and B {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let (m, n) = (self.cols, other.cols);
        let mut out = vec![0.0; m * n];
        for p in 0..self.rows {
            let brow = other.row(p);
            for (i, &a) in self.row(p).iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                for (o, &b) in out[i * n..(i + 1) * n].iter_mut().zip(brow) {
                    *o += a * b;
                }
            }
        }
        Ok(DenseMatrix {
            rows: m,
            cols: n,
            data: out,
        })
    }

    /// `self · otherᵀ`.
    pub fn matmul_t(&self, other: &DenseMatrix) -> Result<DenseMatrix> {
        if self.cols != other.cols {
            return Err(GatsError::ShapeMismatch(format!(
                "cannot form ABᵀ for A {}x{} and B {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let (m, n) = (self.rows, other.rows);
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let a = self.row(i);
            for j in 0..n {
                out[i * n + j] = dot(a, other.row(j));
            }
        }
        Ok(DenseMatrix {
            rows: m,
            cols: n,
            data: out,
        })
    }

    pub fn add(&self, other: &DenseMatrix) -> Result<DenseMatrix> {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &DenseMatrix) -> Result<DenseMatrix> {
        self.zip_with(other, |a, b| a - b)
    }

    fn zip_with(&self, other: &DenseMatrix, f: impl Fn(f64, f64) -> f64) -> Result<DenseMatrix> {
        if self.shape() != other.shape() {
            return Err(GatsError::ShapeMismatch(format!(
                "{:?} vs {:?}",
                self.shape(),
                other.shape()
            )));
        }
        Ok(DenseMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn scale(&self, s: f64) -> DenseMatrix {
        DenseMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| v * s).collect(),
        }
    }

    /// Multiplies column `j` by `s[j]` (i.e. `self · diag(s)`).
    pub fn scale_columns(&self, s: &[f64]) -> DenseMatrix {
        assert_eq!(s.len(), self.cols);
        let mut out = self.clone();
        for row in out.data.chunks_mut(self.cols) {
            for (v, &f) in row.iter_mut().zip(s) {
                *v *= f;
            }
        }
        out
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn trace(&self) -> f64 {
        (0..self.rows.min(self.cols)).map(|i| self.get(i, i)).sum()
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    /// `‖self − selfᵀ‖_F`; panics on non-square input.
    pub fn asymmetry(&self) -> f64 {
        assert!(self.is_square());
        let n = self.rows;
        let mut s = 0.0;
        for i in 0..n {
            for j in 0..n {
                let d = self.get(i, j) - self.get(j, i);
                s += d * d;
            }
        }
        s.sqrt()
    }

    /// Largest absolute entrywise difference.
    pub fn max_abs_diff(&self, other: &DenseMatrix) -> f64 {
        assert_eq!(self.shape(), other.shape());
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// View as a 2-d tensor.
    pub fn to_tensor(&self) -> DenseTensor {
        DenseTensor {
            dims: vec![self.rows, self.cols],
            data: self.data.clone(),
        }
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// A dense real tensor of order `1..=8`, stored row-major (last index fastest).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DenseTensor {
    dims: Vec<usize>,
    data: Vec<f64>,
}

impl DenseTensor {
    pub fn new(dims: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if dims.is_empty() || dims.len() > MAX_ORDER {
            return Err(GatsError::ShapeMismatch(format!(
                "tensor order must be in 1..={MAX_ORDER}, got {}",
                dims.len()
            )));
        }
        if dims.contains(&0) {
            return Err(GatsError::ShapeMismatch(format!(
                "dimensions must be positive, got {dims:?}"
            )));
        }
        let n: usize = dims.iter().product();
        if n != data.len() {
            return Err(GatsError::ShapeMismatch(format!(
                "dims {dims:?} need {n} entries, got {}",
                data.len()
            )));
        }
        check_finite(&data)?;
        Ok(Self { dims, data })
    }

    pub fn zeros(dims: &[usize]) -> Self {
        Self::new(dims.to_vec(), vec![0.0; dims.iter().product()])
            .expect("invalid dims for zeros")
    }

    pub fn from_fn(dims: &[usize], mut f: impl FnMut(&[usize]) -> f64) -> Self {
        let n: usize = dims.iter().product();
        let mut idx = vec![0usize; dims.len()];
        let mut data = Vec::with_capacity(n);
        for _ in 0..n {
            data.push(f(&idx));
            for k in (0..dims.len()).rev() {
                idx[k] += 1;
                if idx[k] < dims[k] {
                    break;
                }
                idx[k] = 0;
            }
        }
        Self::new(dims.to_vec(), data).expect("from_fn produced an invalid tensor")
    }

    #[inline]
    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    #[inline]
    pub fn order(&self) -> usize {
        self.dims.len()
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
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

    fn flat_index(&self, idx: &[usize]) -> usize {
        debug_assert_eq!(idx.len(), self.dims.len());
        idx.iter()
            .zip(&self.dims)
            .fold(0, |acc, (&i, &n)| acc * n + i)
    }

    pub fn get(&self, idx: &[usize]) -> f64 {
        self.data[self.flat_index(idx)]
    }

    pub fn set(&mut self, idx: &[usize], v: f64) {
        let f = self.flat_index(idx);
        self.data[f] = v;
    }

    /// Reinterprets a 2-d tensor as a matrix.
    pub fn to_matrix(&self) -> Result<DenseMatrix> {
        if self.order() != 2 {
            return Err(GatsError::ShapeMismatch(format!(
                "expected a 2-d tensor, got dims {:?}",
                self.dims
            )));
        }
        Ok(DenseMatrix {
            rows: self.dims[0],
            cols: self.dims[1],
            data: self.data.clone(),
        })
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn sub(&self, other: &DenseTensor) -> Result<DenseTensor> {
        if self.dims != other.dims {
            return Err(GatsError::ShapeMismatch(format!(
                "{:?} vs {:?}",
                self.dims, other.dims
            )));
        }
        Ok(DenseTensor {
            dims: self.dims.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| a - b)
                .collect(),
        })
    }

    pub fn scale(&self, s: f64) -> DenseTensor {
        DenseTensor {
            dims: self.dims.clone(),
            data: self.data.iter().map(|v| v * s).collect(),
        }
    }

    fn check_mode(&self, k: usize) -> Result<()> {
        if k >= self.order() {
            Err(GatsError::ModeOutOfRange {
                mode: k,
                order: self.order(),
            })
        } else {
            Ok(())
        }
    }

    /// `(∏_{j<k} n_j, n_k, ∏_{j>k} n_j)`.
    fn split_at_mode(dims: &[usize], k: usize) -> (usize, usize, usize) {
        let left = dims[..k].iter().product();
        let right = dims[k + 1..].iter().product();
        (left, dims[k], right)
    }
}

/// Mode-k unfolding: an `n_k × ∏_{j≠k} n_j` matrix.
pub fn unfold(x: &DenseTensor, k: usize) -> Result<DenseMatrix> {
    x.check_mode(k)?;
    let (left, nk, right) = DenseTensor::split_at_mode(&x.dims, k);
    let cols = left * right;
    let mut out = vec![0.0; nk * cols];
    for l in 0..left {
        for a in 0..nk {
            let src = &x.data[(l * nk + a) * right..(l * nk + a + 1) * right];
            out[a * cols + l * right..a * cols + (l + 1) * right].copy_from_slice(src);
        }
    }
    Ok(DenseMatrix {
        rows: nk,
        cols,
        data: out,
    })
}

/// Inverse of [`unfold`].
pub fn fold(m: &DenseMatrix, k: usize, dims: &[usize]) -> Result<DenseTensor> {
    if k >= dims.len() {
        return Err(GatsError::ModeOutOfRange {
            mode: k,
            order: dims.len(),
        });
    }
    let (left, nk, right) = DenseTensor::split_at_mode(dims, k);
    if m.rows != nk || m.cols != left * right {
        return Err(GatsError::ShapeMismatch(format!(
            "cannot fold a {}x{} matrix along mode {k} into {dims:?}",
            m.rows, m.cols
        )));
    }
    let cols = m.cols;
    let mut data = vec![0.0; m.data.len()];
    for l in 0..left {
        for a in 0..nk {
            data[(l * nk + a) * right..(l * nk + a + 1) * right]
                .copy_from_slice(&m.data[a * cols + l * right..a * cols + (l + 1) * right]);
        }
    }
    DenseTensor::new(dims.to_vec(), data)
}

/// Mode-k product `C ×_k U`: contracts mode k of `c` with the columns of `u`.
pub fn mode_product(c: &DenseTensor, u: &DenseMatrix, k: usize) -> Result<DenseTensor> {
    c.check_mode(k)?;
    if u.cols != c.dims[k] {
        return Err(GatsError::ShapeMismatch(format!(
            "mode-{k} product needs {} columns, matrix is {}x{}",
            c.dims[k], u.rows, u.cols
        )));
    }
    let (left, nk, right) = DenseTensor::split_at_mode(&c.dims, k);
    let m = u.rows;
    let mut out = vec![0.0; left * m * right];
    for l in 0..left {
        for a in 0..m {
            let dst = &mut out[(l * m + a) * right..(l * m + a + 1) * right];
            for (b, &w) in u.row(a).iter().enumerate() {
                if w == 0.0 {
                    continue;
                }
                let src = &c.data[(l * nk + b) * right..(l * nk + b + 1) * right];
                for (d, &s) in dst.iter_mut().zip(src) {
                    *d += w * s;
                }
            }
        }
    }
    let mut dims = c.dims.clone();
    dims[k] = m;
    Ok(DenseTensor { dims, data: out })
}

/// `C ×_k Uᵀ` without materializing the transpose.
pub fn mode_product_t(c: &DenseTensor, u: &DenseMatrix, k: usize) -> Result<DenseTensor> {
    c.check_mode(k)?;
    if u.rows != c.dims[k] {
        return Err(GatsError::ShapeMismatch(format!(
            "transposed mode-{k} product needs {} rows, matrix is {}x{}",
            c.dims[k], u.rows, u.cols
        )));
    }
    let (left, nk, right) = DenseTensor::split_at_mode(&c.dims, k);
    let m = u.cols;
    let mut out = vec![0.0; left * m * right];
    for l in 0..left {
        for b in 0..nk {
            let src = &c.data[(l * nk + b) * right..(l * nk + b + 1) * right];
            for (a, &w) in u.row(b).iter().enumerate() {
                if w == 0.0 {
                    continue;
                }
                let dst = &mut out[(l * m + a) * right..(l * m + a + 1) * right];
                for (d, &s) in dst.iter_mut().zip(src) {
                    *d += w * s;
                }
            }
        }
    }
    let mut dims = c.dims.clone();
    dims[k] = m;
    Ok(DenseTensor { dims, data: out })
}

/// Mode-k Gram matrix `unfold(X,k) · unfold(X,k)ᵀ` (symmetric PSD, `n_k × n_k`).
pub fn sk_gram(x: &DenseTensor, k: usize) -> Result<DenseMatrix> {
    x.check_mode(k)?;
    let (left, nk, right) = DenseTensor::split_at_mode(&x.dims, k);
    let mut g = vec![0.0; nk * nk];
    for l in 0..left {
        let block = &x.data[l * nk * right..(l + 1) * nk * right];
        for a in 0..nk {
            let ra = &block[a * right..(a + 1) * right];
            for b in a..nk {
                g[a * nk + b] += dot(ra, &block[b * right..(b + 1) * right]);
            }
        }
    }
    for a in 0..nk {
        for b in 0..a {
            g[a * nk + b] = g[b * nk + a];
        }
    }
    Ok(DenseMatrix {
        rows: nk,
        cols: nk,
        data: g,
    })
}

pub fn frobenius_norm(x: &DenseTensor) -> f64 {
    x.frobenius_norm()
}

/// Relative ℓ2 error `‖X − X̂‖_F / ‖X‖_F`.
pub fn rel_err_l2(x: &DenseTensor, x_hat: &DenseTensor) -> Result<f64> {
    let diff = x.sub(x_hat)?;
    let norm = x.frobenius_norm();
    if norm == 0.0 {
        return Err(GatsError::ZeroNorm);
    }
    Ok(diff.frobenius_norm() / norm)
}
