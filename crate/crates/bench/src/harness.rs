//! Timing of single passes with scratch accounting and an out-of-memory guard.

use std::any::Any;
use std::fmt;
use std::hint::black_box;
use std::str::FromStr;
use std::time::{Duration, Instant};

use lightning_core::{
    attention_inputs, batched_backward, batched_forward, chunked_forward, oracle_backward,
    oracle_forward, recurrent_forward, tiled_backward, tiled_forward, upstream_grad,
    AttentionConfig, Execution, HeadInput, KvState, Matrix, Precision, Scalar, Seed,
};

use crate::alloc::{accounting_active, measure_scratch, Scope};
use crate::error::{BenchError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ImplId {
    Oracle,
    Recurrent,
    Tiled,
    Chunked,
}

impl ImplId {
    pub fn name(self) -> &'static str {
        match self {
            ImplId::Oracle => "oracle",
            ImplId::Recurrent => "recurrent",
            ImplId::Tiled => "tiled",
            ImplId::Chunked => "chunked",
        }
    }
}

impl fmt::Display for ImplId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ImplId {
    type Err = BenchError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "oracle" => Ok(ImplId::Oracle),
            "recurrent" => Ok(ImplId::Recurrent),
            "tiled" => Ok(ImplId::Tiled),
            "chunked" => Ok(ImplId::Chunked),
            other => Err(BenchError::InvalidArgument(format!(
                "unknown implementation '{other}' (expected oracle|recurrent|tiled|chunked)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Direction {
    Forward,
    Backward,
    ForwardBackward,
}

impl Direction {
    pub fn name(self) -> &'static str {
        match self {
            Direction::Forward => "forward",
            Direction::Backward => "backward",
            Direction::ForwardBackward => "fwd+bwd",
        }
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Direction {
    type Err = BenchError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "forward" | "fwd" => Ok(Direction::Forward),
            "backward" | "bwd" => Ok(Direction::Backward),
            "fwd+bwd" | "both" => Ok(Direction::ForwardBackward),
            other => Err(BenchError::InvalidArgument(format!(
                "unknown direction '{other}' (expected forward|backward|fwd+bwd)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchOptions {
    pub seed: u64,
    /// Bytes a pass may need before it is reported as OOM instead of run.
    /// `None` uses 80% of the host's available memory.
    pub memory_budget: Option<u64>,
    /// Rows per chunk for the chunked implementation; defaults to `16·B`.
    pub chunk_len: Option<usize>,
    /// Number of independent heads; more than one runs the batched wrappers.
    pub heads: usize,
    pub execution: Execution,
}

impl Default for BenchOptions {
    fn default() -> Self {
        BenchOptions {
            seed: 0,
            memory_budget: None,
            chunk_len: None,
            heads: 1,
            execution: Execution::Sequential,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Outcome {
    Measured {
        median_seconds: f64,
        per_token_microseconds: f64,
        scratch_bytes: u64,
    },
    /// The pass was not run: its estimated footprint exceeds the budget.
    OutOfMemory { required_bytes: u64 },
}

/// One timing row.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchRecord {
    pub impl_id: ImplId,
    pub direction: Direction,
    pub n: usize,
    pub d: usize,
    pub dv: usize,
    pub block: usize,
    pub lambda: f64,
    pub reps: usize,
    pub heads: usize,
    pub execution: Execution,
    pub outcome: Outcome,
}

impl BenchRecord {
    /// Implementation column: the id, plus head count and mode for batched runs.
    pub fn impl_label(&self) -> String {
        if self.heads > 1 {
            let mode = match self.execution {
                Execution::Sequential => "seq",
                Execution::Parallel => "par",
            };
            format!("{}-h{}-{}", self.impl_id, self.heads, mode)
        } else {
            self.impl_id.to_string()
        }
    }

    pub fn median_seconds(&self) -> Option<f64> {
        match self.outcome {
            Outcome::Measured { median_seconds, .. } => Some(median_seconds),
            Outcome::OutOfMemory { .. } => None,
        }
    }

    pub fn per_token_microseconds(&self) -> Option<f64> {
        match self.outcome {
            Outcome::Measured {
                per_token_microseconds,
                ..
            } => Some(per_token_microseconds),
            Outcome::OutOfMemory { .. } => None,
        }
    }

    pub fn scratch_bytes(&self) -> Option<u64> {
        match self.outcome {
            Outcome::Measured { scratch_bytes, .. } => Some(scratch_bytes),
            Outcome::OutOfMemory { .. } => None,
        }
    }

    pub fn is_oom(&self) -> bool {
        matches!(self.outcome, Outcome::OutOfMemory { .. })
    }
}

/// 80% of `MemAvailable`, or 4 GiB when it cannot be read.
pub fn default_memory_budget() -> u64 {
    let from_proc = std::fs::read_to_string("/proc/meminfo").ok().and_then(|s| {
        s.lines()
            .find(|l| l.starts_with("MemAvailable:"))
            .and_then(|l| l.split_whitespace().nth(1))
            .and_then(|kb| kb.parse::<u64>().ok())
    });
    match from_proc {
        Some(kb) => kb * 1024 / 10 * 8,
        None => 4 << 30,
    }
}

fn chunk_len(cfg: &AttentionConfig, opts: &BenchOptions) -> usize {
    opts.chunk_len.unwrap_or(16 * cfg.block).clamp(1, cfg.n)
}

/// Upper estimate of the bytes a pass touches: inputs, outputs and scratch.
pub fn estimate_bytes(
    impl_id: ImplId,
    direction: Direction,
    cfg: &AttentionConfig,
    opts: &BenchOptions,
) -> u64 {
    let (n, d, dv) = (cfg.n as u64, cfg.d as u64, cfg.dv as u64);
    let b = cfg.block.min(cfg.n) as u64;
    let inputs = n * (2 * d + 2 * dv);
    let outputs = match direction {
        Direction::Forward => n * dv,
        Direction::Backward => n * (2 * d + dv),
        Direction::ForwardBackward => n * (2 * d + 2 * dv),
    };
    let scratch = match impl_id {
        // forward holds the mask plus one score tile; backward two n×n buffers
        ImplId::Oracle => match direction {
            Direction::Forward => n * n + 128 * 128,
            _ => 2 * n * n,
        },
        ImplId::Recurrent => 2 * d * dv,
        ImplId::Tiled => 3 * b * b + 2 * b * d.max(dv) + 3 * d * dv,
        ImplId::Chunked => {
            let c = chunk_len(cfg, opts) as u64;
            c * (2 * d + 2 * dv) + 3 * b * b + 2 * b * d.max(dv) + 3 * d * dv
        }
    };
    (inputs + outputs + scratch) * cfg.precision.bytes() as u64 * opts.heads.max(1) as u64
}

fn check_supported(impl_id: ImplId, direction: Direction, heads: usize) -> Result<()> {
    let backward = direction != Direction::Forward;
    if backward && matches!(impl_id, ImplId::Recurrent | ImplId::Chunked) {
        return Err(BenchError::Unsupported {
            impl_id: impl_id.name(),
            direction: direction.name(),
        });
    }
    if heads > 1 && impl_id != ImplId::Tiled {
        return Err(BenchError::InvalidArgument(format!(
            "multi-head runs are only available for tiled, not {impl_id}"
        )));
    }
    if heads == 0 {
        return Err(BenchError::InvalidArgument(
            "heads must be at least 1".into(),
        ));
    }
    Ok(())
}

/// Times one pass: a discarded warm-up run, then `reps` timed runs; the median
/// is reported. Input generation happens before any timing.
pub fn time_pass(
    impl_id: ImplId,
    direction: Direction,
    cfg: &AttentionConfig,
    reps: usize,
    opts: &BenchOptions,
) -> Result<BenchRecord> {
    let mut records = time_interleaved(&[(impl_id, direction, *cfg)], reps, opts)?;
    Ok(records.remove(0))
}

/// Times several passes in rounds: every pass gets one discarded warm-up run,
/// then each round runs every pass once. Slow stretches on a shared host
/// then land on all passes alike instead of on whichever ran during them.
///
/// Inputs for all passes are generated up front, so each pass's memory
/// estimate also counts the inputs held for the others.
pub fn time_interleaved(
    passes: &[(ImplId, Direction, AttentionConfig)],
    reps: usize,
    opts: &BenchOptions,
) -> Result<Vec<BenchRecord>> {
    if reps < 3 {
        return Err(BenchError::InvalidArgument(format!(
            "reps must be at least 3, got {reps}"
        )));
    }
    for &(impl_id, direction, _) in passes {
        check_supported(impl_id, direction, opts.heads)?;
    }
    if !accounting_active() {
        return Err(BenchError::AccountingInactive);
    }

    let budget = opts.memory_budget.unwrap_or_else(default_memory_budget);
    let held: Vec<u64> = passes
        .iter()
        .map(|(_, _, cfg)| input_bytes(cfg, opts))
        .collect();
    let total_held: u64 = held.iter().sum();

    let mut runners: Vec<Option<Box<dyn Runner>>> = Vec::with_capacity(passes.len());
    let mut outcomes: Vec<Option<Outcome>> = Vec::with_capacity(passes.len());
    for (i, &(impl_id, direction, cfg)) in passes.iter().enumerate() {
        let required = estimate_bytes(impl_id, direction, &cfg, opts) + (total_held - held[i]);
        if required > budget {
            runners.push(None);
            outcomes.push(Some(Outcome::OutOfMemory {
                required_bytes: required,
            }));
            continue;
        }
        let runner: Box<dyn Runner> = match cfg.precision {
            Precision::Single => Box::new(PassRunner::<f32>::new(impl_id, direction, cfg, opts)),
            Precision::Double => Box::new(PassRunner::<f64>::new(impl_id, direction, cfg, opts)),
        };
        runners.push(Some(runner));
        outcomes.push(None);
    }

    let mut times: Vec<Vec<Duration>> = vec![Vec::with_capacity(reps); passes.len()];
    let mut scratch = vec![0usize; passes.len()];
    for round in 0..=reps {
        for (i, runner) in runners.iter_mut().enumerate() {
            if let Some(runner) = runner {
                let (elapsed, used) = runner.run_once()?;
                scratch[i] = scratch[i].max(used);
                if round > 0 {
                    times[i].push(elapsed);
                }
            }
        }
    }

    let records = passes
        .iter()
        .enumerate()
        .map(|(i, &(impl_id, direction, cfg))| {
            let outcome = outcomes[i].unwrap_or_else(|| {
                let median = median(&mut times[i]).as_secs_f64();
                Outcome::Measured {
                    median_seconds: median,
                    per_token_microseconds: median * 1e6 / cfg.n as f64,
                    scratch_bytes: scratch[i] as u64,
                }
            });
            BenchRecord {
                impl_id,
                direction,
                n: cfg.n,
                d: cfg.d,
                dv: cfg.dv,
                block: cfg.block,
                lambda: cfg.decay.get(),
                reps,
                heads: opts.heads,
                execution: opts.execution,
                outcome,
            }
        })
        .collect();
    Ok(records)
}

/// Bytes of generated inputs (Q, K, V and the upstream gradient) for one pass.
fn input_bytes(cfg: &AttentionConfig, opts: &BenchOptions) -> u64 {
    let per_head = cfg.n as u64 * (2 * cfg.d as u64 + 2 * cfg.dv as u64);
    per_head * cfg.precision.bytes() as u64 * opts.heads.max(1) as u64
}

struct Inputs<T> {
    q: Matrix<T>,
    k: Matrix<T>,
    v: Matrix<T>,
}

type Retained = Box<dyn Any>;

trait Runner {
    /// One run of the pass: wall time and scratch bytes.
    fn run_once(&mut self) -> Result<(Duration, usize)>;
}

struct PassRunner<T> {
    impl_id: ImplId,
    direction: Direction,
    cfg: AttentionConfig,
    opts: BenchOptions,
    inputs: Vec<Inputs<T>>,
    d_outs: Vec<Matrix<T>>,
    scope: Scope,
}

impl<T: Scalar> PassRunner<T> {
    fn new(
        impl_id: ImplId,
        direction: Direction,
        cfg: AttentionConfig,
        opts: &BenchOptions,
    ) -> Self {
        let mut inputs = Vec::with_capacity(opts.heads);
        let mut d_outs = Vec::with_capacity(opts.heads);
        for h in 0..opts.heads {
            let seed = Seed(opts.seed).derive(h as u64);
            let (q, k, v) = attention_inputs::<T>(cfg.n, cfg.d, cfg.dv, seed);
            d_outs.push(upstream_grad::<T>(cfg.n, cfg.dv, seed));
            inputs.push(Inputs { q, k, v });
        }
        let scope = if opts.heads > 1 && opts.execution == Execution::Parallel {
            Scope::Process
        } else {
            Scope::Thread
        };
        PassRunner {
            impl_id,
            direction,
            cfg,
            opts: opts.clone(),
            inputs,
            d_outs,
            scope,
        }
    }
}

impl<T: Scalar> Runner for PassRunner<T> {
    fn run_once(&mut self) -> Result<(Duration, usize)> {
        let ((result, elapsed), used) = measure_scratch(self.scope, || {
            let start = Instant::now();
            let r = run_pass(
                self.impl_id,
                self.direction,
                &self.cfg,
                &self.opts,
                &self.inputs,
                &self.d_outs,
            );
            (r, start.elapsed())
        });
        drop(black_box(result?));
        Ok((elapsed, used))
    }
}

fn median(times: &mut [Duration]) -> Duration {
    times.sort();
    let mid = times.len() / 2;
    if times.len().is_multiple_of(2) {
        (times[mid - 1] + times[mid]) / 2
    } else {
        times[mid]
    }
}

fn run_pass<T: Scalar>(
    impl_id: ImplId,
    direction: Direction,
    cfg: &AttentionConfig,
    opts: &BenchOptions,
    inputs: &[Inputs<T>],
    d_outs: &[Matrix<T>],
) -> Result<Retained> {
    let decay = cfg.decay;
    let fwd = matches!(direction, Direction::Forward | Direction::ForwardBackward);
    let bwd = matches!(direction, Direction::Backward | Direction::ForwardBackward);

    if opts.heads > 1 {
        let heads: Vec<_> = inputs
            .iter()
            .map(|i| HeadInput {
                q: &i.q,
                k: &i.k,
                v: &i.v,
                decay,
            })
            .collect();
        let mut kept: Vec<Retained> = Vec::new();
        if fwd {
            kept.push(Box::new(batched_forward(
                &heads,
                cfg.block,
                opts.execution,
            )?));
        }
        if bwd {
            kept.push(Box::new(batched_backward(
                &heads,
                d_outs,
                cfg.block,
                opts.execution,
            )?));
        }
        return Ok(Box::new(kept));
    }

    let Inputs { q, k, v } = &inputs[0];
    let d_out = &d_outs[0];
    let mut kept: Vec<Retained> = Vec::with_capacity(2);
    match impl_id {
        ImplId::Oracle => {
            if fwd {
                kept.push(Box::new(oracle_forward(q, k, v, decay)?));
            }
            if bwd {
                kept.push(Box::new(oracle_backward(q, k, v, d_out, decay)?));
            }
        }
        ImplId::Tiled => {
            if fwd {
                kept.push(Box::new(tiled_forward(q, k, v, decay, cfg.block)?));
            }
            if bwd {
                kept.push(Box::new(tiled_backward(q, k, v, d_out, decay, cfg.block)?));
            }
        }
        ImplId::Recurrent => kept.push(Box::new(recurrent_forward(q, k, v, decay)?)),
        ImplId::Chunked => {
            // streaming consumer: each chunk's output is dropped once read
            let chunk = chunk_len(cfg, opts);
            let mut state = KvState::<T>::new(cfg.d, cfg.dv);
            let mut start = 0;
            while start < cfg.n {
                let len = chunk.min(cfg.n - start);
                let (o, next) = chunked_forward(
                    &q.slice_rows(start, len)?,
                    &k.slice_rows(start, len)?,
                    &v.slice_rows(start, len)?,
                    decay,
                    cfg.block,
                    &state,
                )?;
                black_box(&o);
                state = next;
                start += len;
            }
            kept.push(Box::new(state));
        }
    }
    Ok(Box::new(kept))
}
