//! Sequence-length and block-size sweeps.

use std::fmt;

use lightning_core::{
    attention_inputs, tiled_forward, AttentionConfig, Decay, Matrix, Precision, Scalar, Seed,
};

use crate::error::{BenchError, Result};
use crate::harness::{time_interleaved, BenchOptions, BenchRecord, Direction, ImplId};

/// Fewest lengths a scaling sweep accepts.
pub const MIN_SWEEP_POINTS: usize = 4;
pub const LINEAR_BAND: (f64, f64) = (1.5, 2.7);
pub const QUADRATIC_BAND: (f64, f64) = (3.2, 5.0);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scaling {
    LinearLike,
    QuadraticLike,
    Inconclusive,
}

impl fmt::Display for Scaling {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scaling::LinearLike => "linear-like",
            Scaling::QuadraticLike => "quadratic-like",
            Scaling::Inconclusive => "inconclusive",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScalingVerdict {
    pub impl_id: ImplId,
    /// `time(2n) / time(n)` for each adjacent pair of lengths.
    pub ratios: Vec<f64>,
    /// max/min of per-token time over the sweep; NaN if any point was OOM.
    pub per_token_spread: f64,
    pub classification: Scaling,
}

impl fmt::Display for ScalingVerdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let ratios: Vec<String> = self.ratios.iter().map(|r| format!("{r:.2}")).collect();
        write!(
            f,
            "{}: {} ratios=[{}] per-token spread={:.2}",
            self.impl_id,
            self.classification,
            ratios.join(", "),
            self.per_token_spread
        )
    }
}

fn within(x: f64, (lo, hi): (f64, f64)) -> bool {
    x >= lo && x <= hi
}

/// Classifies a ratio list. An empty list or any non-finite ratio is inconclusive.
pub fn classify(ratios: &[f64]) -> Scaling {
    if ratios.is_empty() || ratios.iter().any(|r| !r.is_finite()) {
        Scaling::Inconclusive
    } else if ratios.iter().all(|&r| within(r, LINEAR_BAND)) {
        Scaling::LinearLike
    } else if ratios.iter().all(|&r| within(r, QUADRATIC_BAND)) {
        Scaling::QuadraticLike
    } else {
        Scaling::Inconclusive
    }
}

/// Builds a verdict from one implementation's records, ordered by `n`.
/// A pair with an OOM side contributes a NaN ratio.
pub fn verdict(impl_id: ImplId, records: &[BenchRecord]) -> ScalingVerdict {
    let ratios: Vec<f64> = records
        .windows(2)
        .map(|w| match (w[0].median_seconds(), w[1].median_seconds()) {
            (Some(a), Some(b)) => b / a,
            _ => f64::NAN,
        })
        .collect();
    let per_token: Option<Vec<f64>> = records.iter().map(|r| r.per_token_microseconds()).collect();
    let per_token_spread = match per_token {
        Some(p) if !p.is_empty() => {
            let max = p.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let min = p.iter().cloned().fold(f64::INFINITY, f64::min);
            max / min
        }
        _ => f64::NAN,
    };
    ScalingVerdict {
        impl_id,
        classification: classify(&ratios),
        ratios,
        per_token_spread,
    }
}

/// Checks that `lens` has at least [`MIN_SWEEP_POINTS`] entries, each double the last.
pub fn validate_lengths(lens: &[usize]) -> Result<()> {
    if lens.len() < MIN_SWEEP_POINTS {
        return Err(BenchError::InvalidArgument(format!(
            "minimum {MIN_SWEEP_POINTS} points required, got {}",
            lens.len()
        )));
    }
    if lens[0] == 0 {
        return Err(BenchError::InvalidArgument(
            "lengths must be positive".into(),
        ));
    }
    if let Some(w) = lens.windows(2).find(|w| w[1] != 2 * w[0]) {
        return Err(BenchError::InvalidArgument(format!(
            "lengths must strictly double: {} is followed by {}",
            w[0], w[1]
        )));
    }
    Ok(())
}

/// Shape and decay shared by every point of a sweep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepShape {
    pub d: usize,
    pub dv: usize,
    pub block: usize,
    pub decay: Decay,
    pub precision: Precision,
}

/// Times each implementation at each length, then classifies its scaling.
/// Lengths are timed in interleaved rounds; implementations one after another.
/// Records come back grouped by implementation, in the order given.
pub fn scaling_sweep(
    impls: &[(ImplId, Direction)],
    lens: &[usize],
    shape: SweepShape,
    reps: usize,
    opts: &BenchOptions,
) -> Result<(Vec<BenchRecord>, Vec<ScalingVerdict>)> {
    validate_lengths(lens)?;
    if impls.is_empty() {
        return Err(BenchError::InvalidArgument(
            "no implementations given".into(),
        ));
    }
    let mut records = Vec::with_capacity(impls.len() * lens.len());
    let mut verdicts = Vec::with_capacity(impls.len());
    for &(impl_id, direction) in impls {
        let passes = lens
            .iter()
            .map(|&n| {
                let cfg = AttentionConfig::new(
                    n,
                    shape.d,
                    shape.dv,
                    shape.block,
                    shape.decay.get(),
                    shape.precision,
                )?;
                Ok((impl_id, direction, cfg))
            })
            .collect::<Result<Vec<_>>>()?;
        let rows = time_interleaved(&passes, reps, opts)?;
        verdicts.push(verdict(impl_id, &rows));
        records.extend(rows);
    }
    Ok((records, verdicts))
}

/// Relative Frobenius distance `‖a − b‖ / ‖b‖`.
pub fn normwise_distance<T: Scalar>(a: &Matrix<T>, b: &Matrix<T>) -> f64 {
    let (mut num, mut den) = (0.0, 0.0);
    for (x, y) in a.as_slice().iter().zip(b.as_slice()) {
        let (x, y) = (x.as_f64(), y.as_f64());
        num += (x - y) * (x - y);
        den += y * y;
    }
    if den == 0.0 {
        num.sqrt()
    } else {
        (num / den).sqrt()
    }
}

/// Agreement required between block sizes before a block sweep is timed.
pub fn block_agreement_tolerance(precision: Precision) -> f64 {
    match precision {
        Precision::Single => 1e-4,
        Precision::Double => 1e-10,
    }
}

fn check_blocks_agree<T: Scalar>(
    n: usize,
    shape: SweepShape,
    blocks: &[usize],
    seed: u64,
) -> Result<()> {
    let (q, k, v) = attention_inputs::<T>(n, shape.d, shape.dv, Seed(seed).derive(0));
    let reference = tiled_forward(&q, &k, &v, shape.decay, blocks[0])?.output;
    let tol = block_agreement_tolerance(shape.precision);
    for &b in &blocks[1..] {
        let out = tiled_forward(&q, &k, &v, shape.decay, b)?.output;
        let dist = normwise_distance(&out, &reference);
        if dist.is_nan() || dist > tol {
            return Err(BenchError::BlockMismatch(format!(
                "B={b} differs from B={} by {dist:.3e} (tolerance {tol:.1e})",
                blocks[0]
            )));
        }
    }
    Ok(())
}

/// Times the tiled forward+backward pass at each block size, after checking
/// that every block size produces the same output. `shape.block` is ignored.
pub fn block_size_sweep(
    n: usize,
    blocks: &[usize],
    shape: SweepShape,
    reps: usize,
    opts: &BenchOptions,
) -> Result<Vec<BenchRecord>> {
    if blocks.is_empty() {
        return Err(BenchError::InvalidArgument("no block sizes given".into()));
    }
    if let Some(&b) = blocks.iter().find(|&&b| b == 0) {
        return Err(BenchError::InvalidArgument(format!(
            "block size {b} must be positive"
        )));
    }
    match shape.precision {
        Precision::Single => check_blocks_agree::<f32>(n, shape, blocks, opts.seed)?,
        Precision::Double => check_blocks_agree::<f64>(n, shape, blocks, opts.seed)?,
    }
    let passes = blocks
        .iter()
        .map(|&b| {
            let cfg =
                AttentionConfig::new(n, shape.d, shape.dv, b, shape.decay.get(), shape.precision)?;
            Ok((ImplId::Tiled, Direction::ForwardBackward, cfg))
        })
        .collect::<Result<Vec<_>>>()?;
    time_interleaved(&passes, reps, opts)
}
