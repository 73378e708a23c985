use crate::config::Decay;
use crate::error::{AttnError, Result};
use crate::matrix::{apply_mask, axpy, matmul_nn, matmul_nt, scale, Matrix};
use crate::scalar::Scalar;
use crate::state::{check_qkv, KvState};

use super::{blocks, Workspace};

#[derive(Debug, Clone, PartialEq)]
pub struct TiledForwardResult<T> {
    pub output: Matrix<T>,
    pub final_kv: KvState<T>,
}

/// Block-tiled forward pass from a fresh state.
pub fn tiled_forward<T: Scalar>(
    q: &Matrix<T>,
    k: &Matrix<T>,
    v: &Matrix<T>,
    decay: Decay,
    block: usize,
) -> Result<TiledForwardResult<T>> {
    let (_, d, dv) = check_qkv(q, k, v)?;
    let (output, final_kv) = chunked_forward(q, k, v, decay, block, &KvState::new(d, dv))?;
    Ok(TiledForwardResult { output, final_kv })
}

/// Forward pass over one chunk of a longer stream, continuing from `state`.
///
/// Feeding consecutive chunks with the returned state reproduces the one-shot
/// result; bit-for-bit when every chunk length is a multiple of `block`.
pub fn chunked_forward<T: Scalar>(
    q: &Matrix<T>,
    k: &Matrix<T>,
    v: &Matrix<T>,
    decay: Decay,
    block: usize,
    state: &KvState<T>,
) -> Result<(Matrix<T>, KvState<T>)> {
    let (n, d, dv) = check_qkv(q, k, v)?;
    state.check_dims(d, dv)?;
    if block == 0 {
        return Err(AttnError::InvalidArgument(
            "block size must be positive".into(),
        ));
    }

    let mut ws = Workspace::new(block.min(n), d, dv, decay)?;
    let mut next = state.clone();
    let mut out = vec![T::zero(); n * dv];
    for (start, len) in blocks(n, ws.block) {
        forward_block(
            q.row_block(start, len),
            k.row_block(start, len),
            v.row_block(start, len),
            len,
            d,
            dv,
            &mut ws,
            &mut next.kv,
            &mut out[start * dv..(start + len) * dv],
        );
    }
    next.tokens_absorbed += n;
    Ok((Matrix::from_raw(n, dv, out), next))
}

/// `O_i = [(Q_i K_iᵀ) ⊙ M] V_i + Λ Q_i KV`, then
/// `KV ← λ^len KV + (λ^len Λ⁻¹ K_i)ᵀ V_i`.
#[allow(clippy::too_many_arguments)]
fn forward_block<T: Scalar>(
    qi: &[T],
    ki: &[T],
    vi: &[T],
    len: usize,
    d: usize,
    dv: usize,
    ws: &mut Workspace<T>,
    kv: &mut Matrix<T>,
    oi: &mut [T],
) {
    // intra
    matmul_nt(qi, ki, len, d, len, &mut ws.scores);
    apply_mask(&mut ws.scores, &ws.mask, len, ws.block);
    matmul_nn(&ws.scores, vi, len, len, dv, oi);

    // inter
    let kv = kv.data_mut();
    let tmp = &mut ws.tmp[..len * dv];
    matmul_nn(qi, kv, len, d, dv, tmp);
    for (r, (o_row, t_row)) in oi
        .chunks_exact_mut(dv)
        .zip(tmp.chunks_exact(dv))
        .enumerate()
    {
        axpy(ws.diag.lambda_powers[r], t_row, o_row);
    }

    // state update
    scale(ws.diag.block_decay(len), kv);
    let comp = ws.diag.complement(len);
    for r in 0..len {
        let v_row = &vi[r * dv..(r + 1) * dv];
        for i in 0..d {
            let coef = comp[r] * ki[r * d + i];
            axpy(coef, v_row, &mut kv[i * dv..(i + 1) * dv]);
        }
    }
}
