//! Dense row-major matrices and the handful of slice-level products the
//! attention passes are built from.

use crate::error::{AttnError, Result};
use crate::scalar::{Precision, Scalar};

/// Dense 2-D matrix stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Scalar> Matrix<T> {
    pub fn new(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(AttnError::shape(format!(
                "matrix dimensions must be positive, got {rows}x{cols}"
            )));
        }
        if data.len() != rows * cols {
            return Err(AttnError::shape(format!(
                "{rows}x{cols} matrix needs {} values, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(Matrix { rows, cols, data })
    }

    /// # Panics
    /// If either dimension is zero.
    pub fn zeros(rows: usize, cols: usize) -> Self {
        assert!(rows > 0 && cols > 0, "matrix dimensions must be positive");
        Matrix {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    /// Builds a matrix from `f64` rows, converting to `T`. Handy in tests.
    pub fn from_rows(rows: &[&[f64]]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != cols) {
            return Err(AttnError::shape("ragged rows"));
        }
        let data = rows
            .iter()
            .flat_map(|r| r.iter().map(|&x| T::from_f64(x)))
            .collect();
        Matrix::new(rows.len(), cols, data)
    }

    /// Column vector from `f64` values.
    pub fn column(values: &[f64]) -> Result<Self> {
        Matrix::new(
            values.len(),
            1,
            values.iter().map(|&x| T::from_f64(x)).collect(),
        )
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

    pub fn precision(&self) -> Precision {
        T::PRECISION
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn get(&self, row: usize, col: usize) -> T {
        self.data[row * self.cols + col]
    }

    pub fn row(&self, row: usize) -> &[T] {
        &self.data[row * self.cols..(row + 1) * self.cols]
    }

    /// Contiguous slice holding rows `start..start + len`.
    pub fn row_block(&self, start: usize, len: usize) -> &[T] {
        &self.data[start * self.cols..(start + len) * self.cols]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// Stacks matrices with equal column counts on top of each other.
    pub fn vstack(parts: &[Matrix<T>]) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| AttnError::shape("vstack of zero matrices"))?;
        let cols = first.cols;
        if let Some(bad) = parts.iter().find(|m| m.cols != cols) {
            return Err(AttnError::shape(format!(
                "vstack column mismatch: {} vs {}",
                cols, bad.cols
            )));
        }
        let rows = parts.iter().map(|m| m.rows).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for m in parts {
            data.extend_from_slice(&m.data);
        }
        Matrix::new(rows, cols, data)
    }

    /// Copies rows `start..start + len` into a new matrix.
    pub fn slice_rows(&self, start: usize, len: usize) -> Result<Self> {
        if len == 0 || start + len > self.rows {
            return Err(AttnError::shape(format!(
                "row range {start}..{} out of bounds for {} rows",
                start + len,
                self.rows
            )));
        }
        Matrix::new(len, self.cols, self.row_block(start, len).to_vec())
    }

    pub(crate) fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub(crate) fn from_raw(rows: usize, cols: usize, data: Vec<T>) -> Self {
        debug_assert_eq!(data.len(), rows * cols);
        Matrix { rows, cols, data }
    }

    /// Sum over all entries of `self ⊙ other`.
    pub fn frobenius_dot(&self, other: &Matrix<T>) -> Result<T> {
        if self.shape() != other.shape() {
            return Err(AttnError::shape(format!(
                "inner product of {:?} and {:?}",
                self.shape(),
                other.shape()
            )));
        }
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .fold(T::zero(), |acc, (&a, &b)| acc + a * b))
    }

    pub fn to_f64(&self) -> Matrix<f64> {
        Matrix::from_raw(
            self.rows,
            self.cols,
            self.data.iter().map(|x| x.as_f64()).collect(),
        )
    }
}

// ---------------------------------------------------------------------------
// Slice kernels. All operands are row-major; dimensions are passed explicitly.
// ---------------------------------------------------------------------------

/// Rows of the streamed operand kept hot per pass in the products below.
/// Tiling never reorders the additions that form any one output entry.
const TILE: usize = 64;

/// Dot product with eight independent accumulators so the loop vectorizes.
#[inline]
pub(crate) fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [T::zero(); 8];
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for l in 0..8 {
            acc[l] = acc[l] + x[l] * y[l];
        }
    }
    let mut tail = T::zero();
    for (&x, &y) in ra.iter().zip(rb) {
        tail = tail + x * y;
    }
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}

/// `y += alpha * x`
#[inline]
pub(crate) fn axpy<T: Scalar>(alpha: T, x: &[T], y: &mut [T]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi = *yi + alpha * xi;
    }
}

#[inline]
pub(crate) fn scale<T: Scalar>(alpha: T, y: &mut [T]) {
    for yi in y {
        *yi = *yi * alpha;
    }
}

/// `out (m×n) = A (m×k) · Bᵀ` where `B` is `n×k`.
pub(crate) fn matmul_nt<T: Scalar>(a: &[T], b: &[T], m: usize, k: usize, n: usize, out: &mut [T]) {
    debug_assert!(a.len() >= m * k && b.len() >= n * k && out.len() >= m * n);
    for jt in (0..n).step_by(TILE) {
        let je = (jt + TILE).min(n);
        for i in 0..m {
            let ai = &a[i * k..(i + 1) * k];
            for j in jt..je {
                out[i * n + j] = dot(ai, &b[j * k..(j + 1) * k]);
            }
        }
    }
}

/// `out (m×n) = A (m×k) · B (k×n)`. Dense: zero entries of `A` are not skipped.
pub(crate) fn matmul_nn<T: Scalar>(a: &[T], b: &[T], m: usize, k: usize, n: usize, out: &mut [T]) {
    debug_assert!(a.len() >= m * k && b.len() >= k * n && out.len() >= m * n);
    out[..m * n].fill(T::zero());
    for pt in (0..k).step_by(TILE) {
        let pe = (pt + TILE).min(k);
        for i in 0..m {
            let oi = &mut out[i * n..(i + 1) * n];
            for p in pt..pe {
                axpy(a[i * k + p], &b[p * n..(p + 1) * n], oi);
            }
        }
    }
}

/// `out (m×n) = Aᵀ · B` where `A` is `k×m` and `B` is `k×n`.
pub(crate) fn matmul_tn<T: Scalar>(a: &[T], b: &[T], k: usize, m: usize, n: usize, out: &mut [T]) {
    debug_assert!(a.len() >= k * m && b.len() >= k * n && out.len() >= m * n);
    out[..m * n].fill(T::zero());
    for it in (0..m).step_by(TILE) {
        let ie = (it + TILE).min(m);
        for p in 0..k {
            let bp = &b[p * n..(p + 1) * n];
            for i in it..ie {
                axpy(a[p * m + i], bp, &mut out[i * n..(i + 1) * n]);
            }
        }
    }
}

/// Element-wise product with the leading `len×len` corner of a `stride×stride` mask.
pub(crate) fn apply_mask<T: Scalar>(scores: &mut [T], mask: &[T], len: usize, stride: usize) {
    for i in 0..len {
        let row = &mut scores[i * len..(i + 1) * len];
        let mrow = &mask[i * stride..i * stride + len];
        for (s, &m) in row.iter_mut().zip(mrow) {
            *s = *s * m;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_shapes() {
        assert!(Matrix::<f64>::new(2, 2, vec![1.0; 3]).is_err());
        assert!(Matrix::<f64>::new(0, 2, vec![]).is_err());
        assert!(Matrix::<f64>::from_rows(&[&[1.0, 2.0], &[3.0]]).is_err());
    }

    #[test]
    fn products_agree_with_naive_triple_loop() {
        let (m, k, n) = (3, 11, 5);
        let a: Vec<f64> = (0..m * k).map(|i| (i as f64 * 0.37).sin()).collect();
        let b: Vec<f64> = (0..k * n).map(|i| (i as f64 * 0.11).cos()).collect();
        let naive = |i: usize, j: usize| (0..k).map(|p| a[i * k + p] * b[p * n + j]).sum::<f64>();

        let mut nn = vec![0.0; m * n];
        matmul_nn(&a, &b, m, k, n, &mut nn);

        // bt is n×k
        let mut bt = vec![0.0; n * k];
        for p in 0..k {
            for j in 0..n {
                bt[j * k + p] = b[p * n + j];
            }
        }
        let mut nt = vec![0.0; m * n];
        matmul_nt(&a, &bt, m, k, n, &mut nt);

        // at is k×m
        let mut at = vec![0.0; k * m];
        for i in 0..m {
            for p in 0..k {
                at[p * m + i] = a[i * k + p];
            }
        }
        let mut tn = vec![0.0; m * n];
        matmul_tn(&at, &b, k, m, n, &mut tn);

        for i in 0..m {
            for j in 0..n {
                let r = naive(i, j);
                assert!((nn[i * n + j] - r).abs() < 1e-13);
                assert!((nt[i * n + j] - r).abs() < 1e-13);
                assert!((tn[i * n + j] - r).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn vstack_and_slice_are_inverse() {
        let m = Matrix::<f64>::from_rows(&[&[1.0, 2.0], &[3.0, 4.0], &[5.0, 6.0]]).unwrap();
        let top = m.slice_rows(0, 1).unwrap();
        let bottom = m.slice_rows(1, 2).unwrap();
        assert_eq!(Matrix::vstack(&[top, bottom]).unwrap(), m);
        assert!(m.slice_rows(2, 2).is_err());
    }
}
