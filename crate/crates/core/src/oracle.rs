//! Slow reference implementations: the masked left product over the full
//! sequence, the token-by-token recurrence, single-token inference and the
//! full-mask analytic gradients.

use crate::config::Decay;
use crate::error::{AttnError, Result};
use crate::matrix::{apply_mask, axpy, matmul_nn, matmul_nt, matmul_tn, Matrix};
use crate::scalar::Scalar;
use crate::state::{check_qkv, check_upstream, GradBundle, KvState};

/// Lower-triangular decay mask with `m[s][t] = λ^{s−t}` for `s ≥ t`.
#[derive(Debug, Clone, PartialEq)]
pub struct DecayMask<T> {
    pub m: Matrix<T>,
}

impl<T: Scalar> DecayMask<T> {
    pub fn size(&self) -> usize {
        self.m.rows()
    }
}

/// Builds the `n×n` decay mask. Powers come from [`Decay::powers`], so the
/// same entry is bit-identical in masks of any size.
///
/// # Panics
/// If `n` is zero.
pub fn decay_mask<T: Scalar>(n: usize, decay: Decay) -> DecayMask<T> {
    let powers = decay.powers::<T>(n);
    let mut data = vec![T::zero(); n * n];
    for s in 0..n {
        for t in 0..=s {
            data[s * n + t] = powers[s - t];
        }
    }
    DecayMask {
        m: Matrix::new(n, n, data).expect("decay_mask: n must be positive"),
    }
}

/// Edge of the square score tiles formed at a time by [`oracle_forward`].
const SCORE_TILE: usize = 128;

/// `O = [(Q Kᵀ) ⊙ M] V` over the whole sequence. `O(n²·d)` time, `O(n²)` memory.
///
/// The full mask is materialized. Scores are formed one tile at a time and
/// folded into the output in column order, so every output entry sees the
/// same additions in the same order as the untiled product.
pub fn oracle_forward<T: Scalar>(
    q: &Matrix<T>,
    k: &Matrix<T>,
    v: &Matrix<T>,
    decay: Decay,
) -> Result<Matrix<T>> {
    let (n, d, dv) = check_qkv(q, k, v)?;
    let mask = decay_mask::<T>(n, decay);
    let edge = SCORE_TILE.min(n);
    let mut tile = vec![T::zero(); edge * edge];
    let mut out = vec![T::zero(); n * dv];
    for i0 in (0..n).step_by(edge) {
        let rows = edge.min(n - i0);
        for j0 in (0..n).step_by(edge) {
            let cols = edge.min(n - j0);
            let tile = &mut tile[..rows * cols];
            matmul_nt(
                q.row_block(i0, rows),
                k.row_block(j0, cols),
                rows,
                d,
                cols,
                tile,
            );
            for (r, t_row) in tile.chunks_exact_mut(cols).enumerate() {
                let m_row = &mask.m.row(i0 + r)[j0..j0 + cols];
                let o_row = &mut out[(i0 + r) * dv..(i0 + r + 1) * dv];
                for (c, (t, &m)) in t_row.iter_mut().zip(m_row).enumerate() {
                    *t = *t * m;
                    axpy(*t, v.row(j0 + c), o_row);
                }
            }
        }
    }
    Ok(Matrix::from_raw(n, dv, out))
}

/// `kv ← λ·kv + kᵀv`, then `o = q·kv`.
fn absorb_token<T: Scalar>(kv: &mut Matrix<T>, q: &[T], k: &[T], v: &[T], lambda: T, o: &mut [T]) {
    let dv = kv.cols();
    let data = kv.data_mut();
    for (i, &ki) in k.iter().enumerate() {
        let row = &mut data[i * dv..(i + 1) * dv];
        for (x, &vj) in row.iter_mut().zip(v) {
            *x = lambda * *x + ki * vj;
        }
    }
    o.fill(T::zero());
    for (i, &qi) in q.iter().enumerate() {
        axpy(qi, &data[i * dv..(i + 1) * dv], o);
    }
}

/// One decoding step: absorbs `(k_t, v_t)` into a copy of `state` and reads it with `q_t`.
pub fn inference_step<T: Scalar>(
    q_t: &[T],
    k_t: &[T],
    v_t: &[T],
    state: &KvState<T>,
    decay: Decay,
) -> Result<(Vec<T>, KvState<T>)> {
    let (d, dv) = state.kv.shape();
    if q_t.len() != d || k_t.len() != d || v_t.len() != dv {
        return Err(AttnError::shape(format!(
            "step inputs q={}, k={}, v={} do not fit a {d}x{dv} state",
            q_t.len(),
            k_t.len(),
            v_t.len()
        )));
    }
    let mut next = state.clone();
    let mut o = vec![T::zero(); dv];
    absorb_token(
        &mut next.kv,
        q_t,
        k_t,
        v_t,
        T::from_f64(decay.get()),
        &mut o,
    );
    next.tokens_absorbed += 1;
    Ok((o, next))
}

/// Token-by-token recurrence `kv_t = λ kv_{t−1} + k_tᵀ v_t`, `o_t = q_t kv_t`.
pub fn recurrent_forward<T: Scalar>(
    q: &Matrix<T>,
    k: &Matrix<T>,
    v: &Matrix<T>,
    decay: Decay,
) -> Result<(Matrix<T>, KvState<T>)> {
    let (n, d, dv) = check_qkv(q, k, v)?;
    let lambda = T::from_f64(decay.get());
    let mut state = KvState::new(d, dv);
    let mut out = vec![T::zero(); n * dv];
    for t in 0..n {
        absorb_token(
            &mut state.kv,
            q.row(t),
            k.row(t),
            v.row(t),
            lambda,
            &mut out[t * dv..(t + 1) * dv],
        );
    }
    state.tokens_absorbed = n;
    Ok((Matrix::from_raw(n, dv, out), state))
}

/// Full-mask analytic gradients of `L = Σ dO ⊙ O`:
/// `dQ = [(dO Vᵀ) ⊙ M] K`, `dK = [(dO Vᵀ) ⊙ M]ᵀ Q`, `dV = [(Q Kᵀ) ⊙ M]ᵀ dO`.
pub fn oracle_backward<T: Scalar>(
    q: &Matrix<T>,
    k: &Matrix<T>,
    v: &Matrix<T>,
    d_out: &Matrix<T>,
    decay: Decay,
) -> Result<GradBundle<T>> {
    let (n, d, dv) = check_qkv(q, k, v)?;
    check_upstream(d_out, n, dv)?;
    let mask = decay_mask::<T>(n, decay);

    let mut a = vec![T::zero(); n * n];
    matmul_nt(d_out.as_slice(), v.as_slice(), n, dv, n, &mut a);
    apply_mask(&mut a, mask.m.as_slice(), n, n);
    let mut dq = vec![T::zero(); n * d];
    matmul_nn(&a, k.as_slice(), n, n, d, &mut dq);
    let mut dk = vec![T::zero(); n * d];
    matmul_tn(&a, q.as_slice(), n, n, d, &mut dk);

    // reuse the n×n buffer for the masked scores
    matmul_nt(q.as_slice(), k.as_slice(), n, d, n, &mut a);
    apply_mask(&mut a, mask.m.as_slice(), n, n);
    let mut dvv = vec![T::zero(); n * dv];
    matmul_tn(&a, d_out.as_slice(), n, n, dv, &mut dvv);

    Ok(GradBundle {
        dq: Matrix::from_raw(n, d, dq),
        dk: Matrix::from_raw(n, d, dk),
        dv: Matrix::from_raw(n, dv, dvv),
    })
}
