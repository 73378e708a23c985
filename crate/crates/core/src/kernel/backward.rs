use crate::config::Decay;
use crate::error::{AttnError, Result};
use crate::matrix::{apply_mask, axpy, matmul_nn, matmul_nt, matmul_tn, scale, Matrix};
use crate::scalar::Scalar;
use crate::state::{check_qkv, check_upstream, GradBundle};

use super::{blocks, Workspace};

/// Block-tiled backward pass for `L = Σ dO ⊙ O`.
///
/// The first sweep runs forward over blocks, rebuilding `KV` and emitting
/// `dQ`. The second sweep runs in reverse, carrying `dKV` (contributions of
/// strictly later blocks) and emitting `dK` and `dV`.
pub fn tiled_backward<T: Scalar>(
    q: &Matrix<T>,
    k: &Matrix<T>,
    v: &Matrix<T>,
    d_out: &Matrix<T>,
    decay: Decay,
    block: usize,
) -> Result<GradBundle<T>> {
    let (n, d, dv) = check_qkv(q, k, v)?;
    check_upstream(d_out, n, dv)?;
    if block == 0 {
        return Err(AttnError::InvalidArgument(
            "block size must be positive".into(),
        ));
    }

    let mut dq = vec![T::zero(); n * d];
    let mut dk = vec![T::zero(); n * d];
    let mut dvv = vec![T::zero(); n * dv];

    let mut ws = Workspace::new(block.min(n), d, dv, decay)?;
    let b = ws.block;
    let mut second = vec![T::zero(); b * b];
    let mut state = vec![T::zero(); d * dv];

    // forward sweep: dQ_i = [(dO_i V_iᵀ) ⊙ M] K_i + Λ dO_i KVᵀ
    for (start, len) in blocks(n, b) {
        let ki = k.row_block(start, len);
        let vi = v.row_block(start, len);
        let doi = d_out.row_block(start, len);
        let dqi = &mut dq[start * d..(start + len) * d];

        matmul_nt(doi, vi, len, dv, len, &mut ws.scores);
        apply_mask(&mut ws.scores, &ws.mask, len, b);
        matmul_nn(&ws.scores, ki, len, len, d, dqi);

        let tmp = &mut ws.tmp[..len * d];
        matmul_nt(doi, &state, len, dv, d, tmp);
        for (r, (g, t)) in dqi.chunks_exact_mut(d).zip(tmp.chunks_exact(d)).enumerate() {
            axpy(ws.diag.lambda_powers[r], t, g);
        }

        scale(ws.diag.block_decay(len), &mut state);
        let comp = ws.diag.complement(len);
        for r in 0..len {
            let v_row = &vi[r * dv..(r + 1) * dv];
            for i in 0..d {
                axpy(
                    comp[r] * ki[r * d + i],
                    v_row,
                    &mut state[i * dv..(i + 1) * dv],
                );
            }
        }
    }

    // reverse sweep; `state` now holds dKV
    state.fill(T::zero());
    for (start, len) in blocks(n, b).rev() {
        let qi = q.row_block(start, len);
        let ki = k.row_block(start, len);
        let vi = v.row_block(start, len);
        let doi = d_out.row_block(start, len);
        let comp = ws.diag.complement(len);

        // dK_i = [(dO_i V_iᵀ) ⊙ M]ᵀ Q_i + (λ^len Λ⁻¹ V_i) dKVᵀ
        let dki = &mut dk[start * d..(start + len) * d];
        matmul_nt(doi, vi, len, dv, len, &mut ws.scores);
        apply_mask(&mut ws.scores, &ws.mask, len, b);
        matmul_tn(&ws.scores, qi, len, len, d, dki);
        let tmp = &mut ws.tmp[..len * d];
        matmul_nt(vi, &state, len, dv, d, tmp);
        for (r, (g, t)) in dki.chunks_exact_mut(d).zip(tmp.chunks_exact(d)).enumerate() {
            axpy(comp[r], t, g);
        }

        // dV_i = [(Q_i K_iᵀ) ⊙ M]ᵀ dO_i + (λ^len Λ⁻¹ K_i) dKV
        let dvi = &mut dvv[start * dv..(start + len) * dv];
        matmul_nt(qi, ki, len, d, len, &mut second);
        apply_mask(&mut second, &ws.mask, len, b);
        matmul_tn(&second, doi, len, len, dv, dvi);
        let tmp = &mut ws.tmp[..len * dv];
        matmul_nn(ki, &state, len, d, dv, tmp);
        for (r, (g, t)) in dvi
            .chunks_exact_mut(dv)
            .zip(tmp.chunks_exact(dv))
            .enumerate()
        {
            axpy(comp[r], t, g);
        }

        // fold this block in only after its dK/dV are emitted
        scale(ws.diag.block_decay(len), &mut state);
        for r in 0..len {
            let do_row = &doi[r * dv..(r + 1) * dv];
            let lp = ws.diag.lambda_powers[r];
            for i in 0..d {
                axpy(lp * qi[r * d + i], do_row, &mut state[i * dv..(i + 1) * dv]);
            }
        }
    }

    Ok(GradBundle {
        dq: Matrix::from_raw(n, d, dq),
        dk: Matrix::from_raw(n, d, dk),
        dv: Matrix::from_raw(n, dv, dvv),
    })
}
