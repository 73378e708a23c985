//! Multi-head wrappers. Heads are independent, so they may run on the rayon
//! pool; results always come back in head order.

use rayon::prelude::*;

use crate::config::Decay;
use crate::error::{AttnError, Result};
use crate::matrix::Matrix;
use crate::scalar::Scalar;
use crate::state::GradBundle;

use super::{tiled_backward, tiled_forward, TiledForwardResult};

/// One head's inputs. Each head carries its own decay rate.
#[derive(Debug, Clone, Copy)]
pub struct HeadInput<'a, T> {
    pub q: &'a Matrix<T>,
    pub k: &'a Matrix<T>,
    pub v: &'a Matrix<T>,
    pub decay: Decay,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Execution {
    #[default]
    Sequential,
    Parallel,
}

fn run_heads<I, R, F>(items: Vec<I>, exec: Execution, f: F) -> Result<Vec<R>>
where
    I: Send,
    R: Send,
    F: Fn(I) -> Result<R> + Sync + Send,
{
    let results: Vec<Result<R>> = match exec {
        Execution::Sequential => items.into_iter().map(&f).collect(),
        Execution::Parallel => items.into_par_iter().map(&f).collect(),
    };
    results
        .into_iter()
        .enumerate()
        .map(|(head, r)| {
            r.map_err(|e| AttnError::Head {
                head,
                source: Box::new(e),
            })
        })
        .collect()
}

pub fn batched_forward<T: Scalar>(
    heads: &[HeadInput<'_, T>],
    block: usize,
    exec: Execution,
) -> Result<Vec<TiledForwardResult<T>>> {
    run_heads(heads.to_vec(), exec, |h| {
        tiled_forward(h.q, h.k, h.v, h.decay, block)
    })
}

/// `d_outs[h]` is the upstream cotangent for `heads[h]`.
pub fn batched_backward<T: Scalar>(
    heads: &[HeadInput<'_, T>],
    d_outs: &[Matrix<T>],
    block: usize,
    exec: Execution,
) -> Result<Vec<GradBundle<T>>> {
    if heads.len() != d_outs.len() {
        return Err(AttnError::shape(format!(
            "{} heads but {} upstream gradients",
            heads.len(),
            d_outs.len()
        )));
    }
    let items: Vec<_> = heads.iter().copied().zip(d_outs).collect();
    run_heads(items, exec, |(h, d_out)| {
        tiled_backward(h.q, h.k, h.v, d_out, h.decay, block)
    })
}
