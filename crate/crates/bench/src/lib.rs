//! Timing and memory harness for the attention kernels.
//!
//! Wall time is the median of several runs after a discarded warm-up.
//! Scratch memory comes from [`CountingAllocator`], which a binary must
//! install as its global allocator before [`time_pass`] will run.

pub mod alloc;
pub mod csv;
pub mod error;
pub mod harness;
pub mod sweep;

pub use alloc::{accounting_active, measure_scratch, CountingAllocator, Scope};
pub use csv::{emit_csv, format_csv, parse_csv, CsvRow, CSV_HEADER};
pub use error::{BenchError, Result};
pub use harness::{
    default_memory_budget, estimate_bytes, time_interleaved, time_pass, BenchOptions, BenchRecord,
    Direction, ImplId, Outcome,
};
pub use sweep::{
    block_size_sweep, classify, normwise_distance, scaling_sweep, validate_lengths, verdict,
    Scaling, ScalingVerdict, SweepShape, MIN_SWEEP_POINTS,
};

#[cfg(test)]
#[global_allocator]
static TEST_ALLOCATOR: CountingAllocator = CountingAllocator;
