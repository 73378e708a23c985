use crate::error::{AttnError, Result};
use crate::matrix::Matrix;
use crate::scalar::Scalar;

/// Running `d×dv` state `Σ_s λ^{t−s} k_sᵀ v_s` plus the number of tokens folded in.
#[derive(Debug, Clone, PartialEq)]
pub struct KvState<T> {
    pub kv: Matrix<T>,
    pub tokens_absorbed: usize,
}

impl<T: Scalar> KvState<T> {
    pub fn new(d: usize, dv: usize) -> Self {
        KvState {
            kv: Matrix::zeros(d, dv),
            tokens_absorbed: 0,
        }
    }

    pub fn d(&self) -> usize {
        self.kv.rows()
    }

    pub fn dv(&self) -> usize {
        self.kv.cols()
    }

    pub(crate) fn check_dims(&self, d: usize, dv: usize) -> Result<()> {
        if self.kv.shape() != (d, dv) {
            return Err(AttnError::shape(format!(
                "state is {:?} but inputs need {d}x{dv}",
                self.kv.shape()
            )));
        }
        Ok(())
    }
}

/// Gradients `(dQ, dK, dV)` of `L = Σ dO ⊙ O`.
#[derive(Debug, Clone, PartialEq)]
pub struct GradBundle<T> {
    pub dq: Matrix<T>,
    pub dk: Matrix<T>,
    pub dv: Matrix<T>,
}

/// Validates `Q: n×d`, `K: n×d`, `V: n×dv`; returns `(n, d, dv)`.
pub(crate) fn check_qkv<T: Scalar>(
    q: &Matrix<T>,
    k: &Matrix<T>,
    v: &Matrix<T>,
) -> Result<(usize, usize, usize)> {
    if q.shape() != k.shape() {
        return Err(AttnError::shape(format!(
            "Q is {:?} but K is {:?}",
            q.shape(),
            k.shape()
        )));
    }
    if v.rows() != q.rows() {
        return Err(AttnError::shape(format!(
            "V has {} rows, expected {}",
            v.rows(),
            q.rows()
        )));
    }
    Ok((q.rows(), q.cols(), v.cols()))
}

pub(crate) fn check_upstream<T: Scalar>(d_out: &Matrix<T>, n: usize, dv: usize) -> Result<()> {
    if d_out.shape() != (n, dv) {
        return Err(AttnError::shape(format!(
            "dO is {:?}, expected ({n}, {dv})",
            d_out.shape()
        )));
    }
    Ok(())
}
