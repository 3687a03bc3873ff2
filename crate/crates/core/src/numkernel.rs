//! Dense row-major matrices and numerically stable reductions.
//!
//! Every reduction sums left to right in index order so that repeated runs are
//! bitwise identical. Nothing here uses SIMD or blocked kernels.

use crate::error::{Error, Result};

/// Floor applied to row norms by [`l2_normalize`].
pub const NORM_EPS: f64 = 1e-12;

/// Row-major `rows x cols` matrix of `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

/// Sample features, one row per sample.
pub type FeatureMatrix = Matrix;

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Shape(format!(
                "{} values cannot fill a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    /// Builds a matrix from equal-length rows. An empty slice gives `0 x cols`
    /// only through [`Matrix::zeros`]; here it yields `0 x 0`.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(Error::Shape(format!(
                    "row {i} has {} columns, expected {cols}",
                    r.len()
                )));
            }
            data.extend_from_slice(r);
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
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
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f64]> {
        (0..self.rows).map(move |i| self.row(i))
    }

    #[inline]
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// Index of the first row holding a NaN or infinity.
    pub fn first_non_finite_row(&self) -> Option<usize> {
        (0..self.rows).find(|&i| self.row(i).iter().any(|x| !x.is_finite()))
    }

    pub fn check_finite(&self) -> Result<()> {
        match self.first_non_finite_row() {
            Some(row) => Err(Error::NonFinite { row }),
            None => Ok(()),
        }
    }

    /// Stacks `other` below `self`.
    pub fn vstack(&self, other: &Matrix) -> Result<Matrix> {
        if self.rows == 0 {
            return Ok(other.clone());
        }
        if other.rows == 0 {
            return Ok(self.clone());
        }
        if self.cols != other.cols {
            return Err(Error::Shape(format!(
                "cannot stack {} columns on {} columns",
                other.cols, self.cols
            )));
        }
        let mut data = self.data.clone();
        data.extend_from_slice(&other.data);
        Ok(Matrix {
            rows: self.rows + other.rows,
            cols: self.cols,
            data,
        })
    }

    /// Rows `start..end` as a new matrix.
    pub fn slice_rows(&self, start: usize, end: usize) -> Matrix {
        Matrix {
            rows: end - start,
            cols: self.cols,
            data: self.data[start * self.cols..end * self.cols].to_vec(),
        }
    }

    pub fn select_rows(&self, idx: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(idx.len() * self.cols);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Matrix {
            rows: idx.len(),
            cols: self.cols,
            data,
        }
    }

    pub fn scale(&mut self, s: f64) {
        self.data.iter_mut().for_each(|x| *x *= s);
    }

    /// `self += s * other`.
    pub fn add_scaled(&mut self, other: &Matrix, s: f64) {
        debug_assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += s * b;
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    /// `x * wᵀ + b` for a weight of shape `out x in` applied to rows of `x`.
    pub fn affine(&self, weight: &Matrix, bias: &[f64]) -> Result<Matrix> {
        if self.cols != weight.cols || bias.len() != weight.rows {
            return Err(Error::Shape(format!(
                "input has {} columns, layer expects {} -> {} (bias {})",
                self.cols,
                weight.cols,
                weight.rows,
                bias.len()
            )));
        }
        let mut out = Matrix::zeros(self.rows, weight.rows);
        for i in 0..self.rows {
            let x = self.row(i);
            for o in 0..weight.rows {
                out[(i, o)] = dot(x, weight.row(o)) + bias[o];
            }
        }
        Ok(out)
    }

    /// `self * other`, plain triple loop.
    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(Error::Shape(format!(
                "matmul {}x{} by {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for j in 0..other.cols {
                let mut acc = 0.0;
                for k in 0..self.cols {
                    acc += self[(i, k)] * other[(k, j)];
                }
                out[(i, j)] = acc;
            }
        }
        Ok(out)
    }
}

impl std::ops::Index<(usize, usize)> for Matrix {
    type Output = f64;

    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

impl std::ops::IndexMut<(usize, usize)> for Matrix {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }
}

/// Left-to-right dot product.
#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = 0.0;
    for (x, y) in a.iter().zip(b) {
        acc += x * y;
    }
    acc
}

#[inline]
pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

#[inline]
pub fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (x, y) in a.iter().zip(b) {
        let d = x - y;
        acc += d * d;
    }
    acc
}

/// Divides each row by `max(‖row‖₂, eps)`. Zero rows come back unchanged.
pub fn l2_normalize(m: &FeatureMatrix, eps: f64) -> Result<FeatureMatrix> {
    if !(eps > 0.0) {
        return Err(Error::InvalidArgument(format!("eps must be > 0, got {eps}")));
    }
    m.check_finite()?;
    let mut out = m.clone();
    for i in 0..out.rows() {
        let scale = norm(m.row(i)).max(eps);
        out.row_mut(i).iter_mut().for_each(|x| *x /= scale);
    }
    Ok(out)
}

/// Pairwise cosine similarities.
#[derive(Debug, Clone, PartialEq)]
pub struct SimMatrix(Matrix);

impl SimMatrix {
    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.0[(i, j)]
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.0.rows()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.0.rows() == 0
    }

    pub fn as_matrix(&self) -> &Matrix {
        &self.0
    }
}

/// `S[i][j]` = cosine of rows `i` and `j`. Only the upper triangle is computed,
/// then mirrored, so the result is exactly symmetric.
pub fn cosine_sim_matrix(m: &FeatureMatrix) -> Result<SimMatrix> {
    let unit = l2_normalize(m, NORM_EPS)?;
    let n = unit.rows();
    let mut s = Matrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let c = dot(unit.row(i), unit.row(j));
            s[(i, j)] = c;
            s[(j, i)] = c;
        }
    }
    Ok(SimMatrix(s))
}

/// `max(xs) + ln Σ exp(x - max)`.
pub fn log_sum_exp(xs: &[f64]) -> Result<f64> {
    if xs.is_empty() {
        return Err(Error::EmptyInput);
    }
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return Ok(f64::NEG_INFINITY);
    }
    let mut acc = 0.0;
    for &x in xs {
        acc += (x - max).exp();
    }
    Ok(max + acc.ln())
}

/// Softmax of one row via [`log_sum_exp`].
pub fn softmax(xs: &[f64]) -> Result<Vec<f64>> {
    let lse = log_sum_exp(xs)?;
    Ok(xs.iter().map(|&x| (x - lse).exp()).collect())
}

/// Index of the largest entry, ties to the smallest index.
pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate().skip(1) {
        if x > xs[best] {
            best = i;
        }
    }
    best
}
