//! Dense row-major matrices and rank-3 tensors.
//!
//! Only the handful of kernels the association pipeline needs: products,
//! elementwise ops and masked softmaxes. `-inf` is the one non-finite value
//! callers are expected to feed in; it marks a masked entry.

use std::ops::{Index, IndexMut};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct Matrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Scalar> Matrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::filled(rows, cols, T::zero())
    }

    pub fn filled(rows: usize, cols: usize, value: T) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = T::one();
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::shape("Matrix::from_vec", &[rows, cols], &[data.len()]));
        }
        Ok(Matrix { rows, cols, data })
    }

    /// Builds from nested rows; all rows must share one length.
    pub fn from_rows<R: AsRef<[T]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(Error::shape("Matrix::from_rows", &[cols], &[r.len()]));
            }
            data.extend_from_slice(r);
        }
        Ok(Matrix {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Matrix { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [T] {
        let c = self.cols;
        &mut self.data[i * c..(i + 1) * c]
    }

    pub fn col(&self, j: usize) -> Vec<T> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    pub fn transpose(&self) -> Self {
        Matrix::from_fn(self.cols, self.rows, |i, j| self[(j, i)])
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_with(&self, other: &Self, op: &'static str, f: impl Fn(T, T) -> T) -> Result<Self> {
        if self.shape() != other.shape() {
            return Err(Error::shape(op, &[self.rows, self.cols], &[other.rows, other.cols]));
        }
        Ok(Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        })
    }

    /// Elementwise product.
    pub fn hadamard(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, "hadamard", |a, b| a * b)
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, "add", |a, b| a + b)
    }

    pub fn scale(&self, s: T) -> Self {
        self.map(|v| v * s)
    }

    pub fn max_abs_diff(&self, other: &Self) -> T {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| (a - b).abs())
            .fold(T::zero(), T::max)
    }
}

impl<T> Index<(usize, usize)> for Matrix<T> {
    type Output = T;

    fn index(&self, (i, j): (usize, usize)) -> &T {
        debug_assert!(i < self.rows && j < self.cols);
        &self.data[i * self.cols + j]
    }
}

impl<T> IndexMut<(usize, usize)> for Matrix<T> {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut T {
        debug_assert!(i < self.rows && j < self.cols);
        &mut self.data[i * self.cols + j]
    }
}

/// Rank-3 tensor, row-major: the last index varies fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor3<T> {
    dims: [usize; 3],
    data: Vec<T>,
}

impl<T: Scalar> Tensor3<T> {
    pub fn zeros(d0: usize, d1: usize, d2: usize) -> Self {
        Tensor3 {
            dims: [d0, d1, d2],
            data: vec![T::zero(); d0 * d1 * d2],
        }
    }

    pub fn from_vec(d0: usize, d1: usize, d2: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != d0 * d1 * d2 {
            return Err(Error::shape("Tensor3::from_vec", &[d0, d1, d2], &[data.len()]));
        }
        Ok(Tensor3 {
            dims: [d0, d1, d2],
            data,
        })
    }

    pub fn from_fn(d0: usize, d1: usize, d2: usize, mut f: impl FnMut(usize, usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(d0 * d1 * d2);
        for a in 0..d0 {
            for b in 0..d1 {
                for c in 0..d2 {
                    data.push(f(a, b, c));
                }
            }
        }
        Tensor3 {
            dims: [d0, d1, d2],
            data,
        }
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    /// Contiguous fiber `[a, b, ..]`.
    pub fn fiber(&self, a: usize, b: usize) -> &[T] {
        let n = self.dims[2];
        let start = (a * self.dims[1] + b) * n;
        &self.data[start..start + n]
    }

    pub fn hadamard(&self, other: &Self) -> Result<Self> {
        if self.dims != other.dims {
            return Err(Error::shape("hadamard", &self.dims, &other.dims));
        }
        Ok(Tensor3 {
            dims: self.dims,
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| a * b).collect(),
        })
    }
}

impl<T> Index<(usize, usize, usize)> for Tensor3<T> {
    type Output = T;

    fn index(&self, (a, b, c): (usize, usize, usize)) -> &T {
        &self.data[(a * self.dims[1] + b) * self.dims[2] + c]
    }
}

impl<T> IndexMut<(usize, usize, usize)> for Tensor3<T> {
    fn index_mut(&mut self, (a, b, c): (usize, usize, usize)) -> &mut T {
        &mut self.data[(a * self.dims[1] + b) * self.dims[2] + c]
    }
}

pub fn matmul<T: Scalar>(a: &Matrix<T>, b: &Matrix<T>) -> Result<Matrix<T>> {
    if a.cols != b.rows {
        return Err(Error::shape("matmul", &[a.rows, a.cols], &[b.rows, b.cols]));
    }
    let mut out = Matrix::zeros(a.rows, b.cols);
    // i-k-j order keeps the inner loop on contiguous rows of `b` and `out`.
    for i in 0..a.rows {
        let out_row = &mut out.data[i * b.cols..(i + 1) * b.cols];
        for k in 0..a.cols {
            let aik = a.data[i * a.cols + k];
            if aik == T::zero() {
                continue;
            }
            for (o, &bkj) in out_row.iter_mut().zip(b.row(k)) {
                *o = *o + aik * bkj;
            }
        }
    }
    Ok(out)
}

/// Softmax over one lane in place. Fails if every entry is `-inf`.
fn softmax_lane<T: Scalar>(lane: &mut [T]) -> std::result::Result<(), ()> {
    let max = lane.iter().copied().fold(T::neg_infinity(), T::max);
    if max == T::neg_infinity() {
        return Err(());
    }
    let mut sum = T::zero();
    for v in lane.iter_mut() {
        // exp(-inf - max) is exactly 0, so masked entries stay 0.
        *v = (*v - max).exp();
        sum = sum + *v;
    }
    for v in lane.iter_mut() {
        *v = *v / sum;
    }
    Ok(())
}

/// Normalizes every row to a probability distribution.
pub fn softmax_rows<T: Scalar>(m: &Matrix<T>) -> Result<Matrix<T>> {
    let mut out = m.clone();
    for i in 0..m.rows {
        softmax_lane(out.row_mut(i)).map_err(|_| Error::FullyMasked { axis: "row", index: i })?;
    }
    Ok(out)
}

/// Normalizes every column to a probability distribution.
pub fn softmax_cols<T: Scalar>(m: &Matrix<T>) -> Result<Matrix<T>> {
    let mut out = m.clone();
    let mut lane = vec![T::zero(); m.rows];
    for j in 0..m.cols {
        for (i, v) in lane.iter_mut().enumerate() {
            *v = m[(i, j)];
        }
        softmax_lane(&mut lane).map_err(|_| Error::FullyMasked {
            axis: "column",
            index: j,
        })?;
        for (i, &v) in lane.iter().enumerate() {
            out[(i, j)] = v;
        }
    }
    Ok(out)
}
