//! Block-tiled decayed linear attention.
//!
//! The sequence is cut into blocks of `B` rows. Inside a block the masked
//! left product `[(Q_i K_iᵀ) ⊙ M] V_i` is used; the contribution of all
//! earlier blocks arrives through the carried `d×dv` state via the right
//! product `Λ Q_i KV`. The backward pass mirrors this with a forward sweep
//! for `dQ` and a reverse sweep carrying `dKV` for `dK` and `dV`.
//!
//! Within-block position `r` runs over `1..=B`. `Λ = diag{λ, …, λ^B}` scales
//! the inter-block read and `λ^B Λ⁻¹ = diag{λ^{B−1}, …, 1}` weights keys in
//! the state update. A trailing partial block of `r < B` rows uses the
//! leading `r` entries of `Λ`, decay `λ^r` and complement `diag{λ^{r−1}, …, 1}`.

mod backward;
mod batched;
mod forward;

pub use backward::tiled_backward;
pub use batched::{batched_backward, batched_forward, Execution, HeadInput};
pub use forward::{chunked_forward, tiled_forward, TiledForwardResult};

use crate::config::Decay;
use crate::error::{AttnError, Result};
use crate::oracle::decay_mask;
use crate::scalar::Scalar;

/// Diagonal factors of one block.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockDecayDiag<T> {
    /// Entry `r` (0-based) is `λ^{r+1}`.
    pub lambda_powers: Vec<T>,
    /// Entry `r` (0-based) is `λ^{B−1−r}`.
    pub complement_powers: Vec<T>,
}

impl<T: Scalar> BlockDecayDiag<T> {
    pub fn block_size(&self) -> usize {
        self.lambda_powers.len()
    }

    /// `λ^len`, the state decay across a block of `len` rows.
    pub fn block_decay(&self, len: usize) -> T {
        self.lambda_powers[len - 1]
    }

    /// `diag{λ^{len−1}, …, 1}` for a block of `len ≤ B` rows.
    pub fn complement(&self, len: usize) -> &[T] {
        &self.complement_powers[self.block_size() - len..]
    }
}

pub fn block_decay<T: Scalar>(block: usize, decay: Decay) -> Result<BlockDecayDiag<T>> {
    if block == 0 {
        return Err(AttnError::InvalidArgument(
            "block size must be positive".into(),
        ));
    }
    let powers = decay.powers::<T>(block + 1);
    Ok(BlockDecayDiag {
        lambda_powers: powers[1..].to_vec(),
        complement_powers: powers[..block].iter().rev().copied().collect(),
    })
}

/// Per-call scratch. Its size depends on `(B, d, dv)` only.
pub(crate) struct Workspace<T> {
    pub block: usize,
    pub mask: Vec<T>,
    pub diag: BlockDecayDiag<T>,
    pub scores: Vec<T>,
    pub tmp: Vec<T>,
}

impl<T: Scalar> Workspace<T> {
    pub fn new(block: usize, d: usize, dv: usize, decay: Decay) -> Result<Self> {
        Ok(Workspace {
            block,
            mask: decay_mask::<T>(block, decay).m.into_vec(),
            diag: block_decay(block, decay)?,
            scores: vec![T::zero(); block * block],
            tmp: vec![T::zero(); block * d.max(dv)],
        })
    }
}

/// Start offsets and lengths of the blocks covering `n` rows.
pub(crate) fn blocks(n: usize, block: usize) -> impl DoubleEndedIterator<Item = (usize, usize)> {
    (0..n.div_ceil(block)).map(move |i| {
        let start = i * block;
        (start, block.min(n - start))
    })
}
