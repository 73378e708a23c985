//! Decayed causal linear attention computed block by block.
//!
//! The crate provides:
//!
//! - [`tiled_forward`] / [`tiled_backward`]: the block-tiled passes, with
//!   masked left products inside a block and a carried `d×dv` state between
//!   blocks. Runtime is linear in sequence length and the working set depends
//!   only on block size and head dimensions.
//! - [`chunked_forward`]: the same recurrence with a caller-held [`KvState`],
//!   for streaming sequences of unbounded length.
//! - [`oracle`]: slow reference implementations used as ground truth.
//! - [`verify`]: error metrics, finite-difference gradients and the
//!   equivalence / gradcheck suites.

pub mod config;
pub mod error;
pub mod fixture;
pub mod kernel;
pub mod matrix;
pub mod oracle;
pub mod scalar;
pub mod state;
pub mod verify;

pub use config::{AttentionConfig, Decay};
pub use error::{AttnError, Result};
pub use fixture::{
    attention_inputs, load_fixture, random_matrix, save_fixture, upstream_grad, Seed,
};
pub use kernel::{
    batched_backward, batched_forward, block_decay, chunked_forward, tiled_backward, tiled_forward,
    BlockDecayDiag, Execution, HeadInput, TiledForwardResult,
};
pub use matrix::Matrix;
pub use oracle::{
    decay_mask, inference_step, oracle_backward, oracle_forward, recurrent_forward, DecayMask,
};
pub use scalar::{Precision, Scalar};
pub use state::{GradBundle, KvState};
