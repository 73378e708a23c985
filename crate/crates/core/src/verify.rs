//! Error metrics, the finite-difference gradient oracle and the seeded
//! equivalence / gradcheck suites.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::config::Decay;
use crate::error::{AttnError, Result};
use crate::fixture::{attention_inputs, upstream_grad, Seed};
use crate::kernel::{chunked_forward, tiled_backward, tiled_forward};
use crate::matrix::Matrix;
use crate::oracle::{oracle_backward, oracle_forward, recurrent_forward};
use crate::scalar::{Precision, Scalar};
use crate::state::{GradBundle, KvState};

/// Denominator floor for relative errors.
pub const REL_FLOOR: f64 = 1e-12;

/// Largest sequence length accepted by the gradcheck suite.
pub const GRADCHECK_MAX_N: usize = 24;
/// Largest key or value dimension accepted by the gradcheck suite.
pub const GRADCHECK_MAX_DIM: usize = 6;

/// Worst-element comparison of a candidate against a reference matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorReport {
    pub max_abs_error: f64,
    /// `max |c − r| / max(|r|, REL_FLOOR)` over elements.
    pub max_rel_error: f64,
    /// `(row, col)` of the element with the largest relative error.
    pub location: (usize, usize),
    pub tolerance: f64,
    pub passed: bool,
}

impl fmt::Display for ErrorReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} max_rel={:.3e} max_abs={:.3e} at ({}, {}) tol={:.1e}",
            if self.passed { "PASS" } else { "FAIL" },
            self.max_rel_error,
            self.max_abs_error,
            self.location.0,
            self.location.1,
            self.tolerance
        )
    }
}

/// Compares `candidate` to `reference`. The reference supplies the
/// relative-error denominator, so the arguments are not interchangeable.
pub fn compare<T: Scalar>(
    candidate: &Matrix<T>,
    reference: &Matrix<T>,
    tolerance: f64,
) -> Result<ErrorReport> {
    if candidate.shape() != reference.shape() {
        return Err(AttnError::Shape(format!(
            "candidate {:?} vs reference {:?}",
            candidate.shape(),
            reference.shape()
        )));
    }
    let cols = reference.cols();
    let mut max_abs = 0.0f64;
    let mut max_rel = 0.0f64;
    let mut worst = 0usize;
    for (i, (&c, &r)) in candidate
        .as_slice()
        .iter()
        .zip(reference.as_slice())
        .enumerate()
    {
        let (c, r) = (c.as_f64(), r.as_f64());
        let abs = (c - r).abs();
        let rel = abs / r.abs().max(REL_FLOOR);
        // NaN never compares greater, so catch it explicitly
        if rel.is_nan() || rel > max_rel {
            max_rel = if rel.is_nan() { f64::INFINITY } else { rel };
            worst = i;
        }
        max_abs = max_abs.max(if abs.is_nan() { f64::INFINITY } else { abs });
    }
    Ok(ErrorReport {
        max_abs_error: max_abs,
        max_rel_error: max_rel,
        location: (worst / cols, worst % cols),
        tolerance,
        passed: max_rel <= tolerance,
    })
}

/// Central finite differences of `L = Σ dO ⊙ oracle_forward(Q, K, V)`.
///
/// The loss is evaluated with the same association as the oracle,
/// `[(Q Kᵀ) ⊙ M] V` followed by the inner product with `dO`, but accumulated
/// in double-double arithmetic. `L` is linear in every single input entry, so
/// the central difference has no truncation error and this leaves the
/// quotient accurate to about machine precision for any reasonable `epsilon`.
pub fn finite_diff_grads<T: Scalar>(
    q: &Matrix<T>,
    k: &Matrix<T>,
    v: &Matrix<T>,
    d_out: &Matrix<T>,
    decay: Decay,
    epsilon: f64,
) -> Result<GradBundle<T>> {
    check_fd_args::<T>(epsilon)?;
    let (n, _, dv) = crate::state::check_qkv(q, k, v)?;
    crate::state::check_upstream(d_out, n, dv)?;
    let mask = crate::oracle::decay_mask::<f64>(n, decay).m;
    let (q, k, v, d_out) = (q.to_f64(), k.to_f64(), v.to_f64(), d_out.to_f64());

    let grad_of = |which: usize| -> Result<Matrix<T>> {
        let base = [&q, &k, &v][which];
        let mut work = [q.clone(), k.clone(), v.clone()];
        let mut grad = Vec::with_capacity(base.as_slice().len());
        for idx in 0..base.as_slice().len() {
            let x = base.as_slice()[idx];
            let (xp, xm) = (x + epsilon, x - epsilon);
            work[which].data_mut()[idx] = xp;
            let lp = dd::oracle_loss(&work[0], &work[1], &work[2], &d_out, &mask);
            work[which].data_mut()[idx] = xm;
            let lm = dd::oracle_loss(&work[0], &work[1], &work[2], &d_out, &mask);
            work[which].data_mut()[idx] = x;
            grad.push(T::from_f64(lp.sub(lm).to_f64() / (xp - xm)));
        }
        Matrix::new(base.rows(), base.cols(), grad)
    };

    Ok(GradBundle {
        dq: grad_of(0)?,
        dk: grad_of(1)?,
        dv: grad_of(2)?,
    })
}

fn check_fd_args<T: Scalar>(epsilon: f64) -> Result<()> {
    if T::PRECISION != Precision::Double {
        return Err(AttnError::Precision {
            expected: Precision::Double.name(),
            found: T::PRECISION.name().to_string(),
        });
    }
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(AttnError::InvalidArgument(format!(
            "epsilon must be positive, got {epsilon}"
        )));
    }
    Ok(())
}

/// Double-double accumulation for the finite-difference loss.
mod dd {
    use crate::matrix::Matrix;

    #[derive(Debug, Clone, Copy, Default)]
    pub struct Dd {
        hi: f64,
        lo: f64,
    }

    fn two_sum(a: f64, b: f64) -> (f64, f64) {
        let s = a + b;
        let bb = s - a;
        (s, (a - (s - bb)) + (b - bb))
    }

    fn quick_two_sum(a: f64, b: f64) -> Dd {
        let s = a + b;
        Dd {
            hi: s,
            lo: b - (s - a),
        }
    }

    impl Dd {
        pub fn prod(a: f64, b: f64) -> Dd {
            let p = a * b;
            quick_two_sum(p, a.mul_add(b, -p))
        }

        pub fn add(self, o: Dd) -> Dd {
            let (s, e) = two_sum(self.hi, o.hi);
            quick_two_sum(s, e + self.lo + o.lo)
        }

        pub fn sub(self, o: Dd) -> Dd {
            self.add(Dd {
                hi: -o.hi,
                lo: -o.lo,
            })
        }

        pub fn mul_f64(self, b: f64) -> Dd {
            let p = Dd::prod(self.hi, b);
            quick_two_sum(p.hi, p.lo + self.lo * b)
        }

        pub fn to_f64(self) -> f64 {
            self.hi + self.lo
        }
    }

    /// `Σ dO ⊙ ([(Q Kᵀ) ⊙ M] V)`.
    pub fn oracle_loss(
        q: &Matrix<f64>,
        k: &Matrix<f64>,
        v: &Matrix<f64>,
        d_out: &Matrix<f64>,
        mask: &Matrix<f64>,
    ) -> Dd {
        let n = q.rows();
        let dv = v.cols();
        let mut loss = Dd::default();
        let mut o_row = vec![Dd::default(); dv];
        for t in 0..n {
            o_row.fill(Dd::default());
            for s in 0..=t {
                let score = q
                    .row(t)
                    .iter()
                    .zip(k.row(s))
                    .fold(Dd::default(), |acc, (&a, &b)| acc.add(Dd::prod(a, b)));
                let weighted = score.mul_f64(mask.get(t, s));
                for (o, &vj) in o_row.iter_mut().zip(v.row(s)) {
                    *o = o.add(weighted.mul_f64(vj));
                }
            }
            for (o, &g) in o_row.iter().zip(d_out.row(t)) {
                loss = loss.add(o.mul_f64(g));
            }
        }
        loss
    }
}

/// Central finite differences of `L = Σ dO ⊙ forward(Q, K, V)` for any forward
/// map, evaluated in plain `T` arithmetic.
///
/// Each input entry is perturbed by `±epsilon` and the gradient is
/// `(L⁺ − L⁻) / (x⁺ − x⁻)`, dividing by the step actually realized in floating point.
pub fn finite_diff_grads_with<T, F>(
    q: &Matrix<T>,
    k: &Matrix<T>,
    v: &Matrix<T>,
    d_out: &Matrix<T>,
    epsilon: f64,
    forward: F,
) -> Result<GradBundle<T>>
where
    T: Scalar,
    F: Fn(&Matrix<T>, &Matrix<T>, &Matrix<T>) -> Result<Matrix<T>>,
{
    check_fd_args::<T>(epsilon)?;
    let loss = |q: &Matrix<T>, k: &Matrix<T>, v: &Matrix<T>| -> Result<T> {
        forward(q, k, v)?.frobenius_dot(d_out)
    };
    let eps = T::from_f64(epsilon);

    // which = 0 → Q, 1 → K, 2 → V
    let grad_of = |which: usize| -> Result<Matrix<T>> {
        let base = [q, k, v][which];
        let mut work = [q.clone(), k.clone(), v.clone()];
        let mut grad = Vec::with_capacity(base.as_slice().len());
        for idx in 0..base.as_slice().len() {
            let x = base.as_slice()[idx];
            let (xp, xm) = (x + eps, x - eps);
            work[which].data_mut()[idx] = xp;
            let lp = loss(&work[0], &work[1], &work[2])?;
            work[which].data_mut()[idx] = xm;
            let lm = loss(&work[0], &work[1], &work[2])?;
            work[which].data_mut()[idx] = x;
            grad.push((lp - lm) / (xp - xm));
        }
        Matrix::new(base.rows(), base.cols(), grad)
    };

    Ok(GradBundle {
        dq: grad_of(0)?,
        dk: grad_of(1)?,
        dv: grad_of(2)?,
    })
}

// ---------------------------------------------------------------------------
// Suites
// ---------------------------------------------------------------------------

/// One grid point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SuiteCase {
    pub n: usize,
    pub d: usize,
    pub dv: usize,
    pub block: usize,
    pub lambda: f64,
    pub seed: u64,
}

impl fmt::Display for SuiteCase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "n={} d={} dv={} B={} λ={} seed={}",
            self.n, self.d, self.dv, self.block, self.lambda, self.seed
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteConfig {
    pub cases: Vec<SuiteCase>,
    pub tolerance: f64,
    pub precision: Precision,
    /// Finite-difference step; used by the gradcheck suite only.
    pub epsilon: f64,
}

fn cartesian(
    ns: &[usize],
    ds: &[usize],
    dv_extra: &[usize],
    blocks: &[usize],
    lambdas: &[f64],
    seeds: &[u64],
) -> Vec<SuiteCase> {
    let mut cases = Vec::new();
    for &n in ns {
        for &d in ds {
            for &extra in dv_extra {
                for &block in blocks {
                    for &lambda in lambdas {
                        for &seed in seeds {
                            cases.push(SuiteCase {
                                n,
                                d,
                                dv: d + extra,
                                block,
                                lambda,
                                seed,
                            });
                        }
                    }
                }
            }
        }
    }
    cases
}

impl SuiteConfig {
    /// The full acceptance grid (1536 cases).
    pub fn default_grid() -> Self {
        SuiteConfig {
            cases: cartesian(
                &[1, 2, 7, 16, 33, 64, 100, 256],
                &[1, 4, 32],
                &[0, 3],
                &[1, 4, 16, 64],
                &[0.5, 0.9, 0.999, 1.0],
                &[0, 1],
            ),
            tolerance: 1e-10,
            precision: Precision::Double,
            epsilon: 1e-6,
        }
    }

    /// A trimmed grid for quick local runs.
    pub fn small_grid() -> Self {
        SuiteConfig {
            cases: cartesian(
                &[1, 7, 33, 100],
                &[1, 4],
                &[0, 3],
                &[1, 4, 16],
                &[0.5, 0.9, 1.0],
                &[0],
            ),
            ..Self::default_grid()
        }
    }

    /// Small multi-block instances for finite-difference checks.
    pub fn gradcheck_grid() -> Self {
        let case = |n, d, dv, block, lambda, seed| SuiteCase {
            n,
            d,
            dv,
            block,
            lambda,
            seed,
        };
        SuiteConfig {
            cases: vec![
                case(1, 1, 1, 1, 0.5, 0),
                case(12, 4, 4, 5, 0.8, 3),
                case(12, 4, 6, 5, 0.8, 3),
                case(24, 6, 6, 8, 0.9, 1),
                case(24, 6, 3, 5, 0.999, 2),
                case(17, 3, 5, 4, 1.0, 4),
                case(9, 2, 2, 1, 0.5, 5),
                case(20, 5, 5, 24, 0.7, 6),
            ],
            tolerance: 1e-5,
            precision: Precision::Double,
            epsilon: 1e-6,
        }
    }

    /// Shifts every case's seed by `offset`.
    pub fn with_seed_offset(mut self, offset: u64) -> Self {
        for c in &mut self.cases {
            c.seed = c.seed.wrapping_add(offset);
        }
        self
    }

    fn validate(&self) -> Result<()> {
        for c in &self.cases {
            if c.n == 0 || c.d == 0 || c.dv == 0 || c.block == 0 {
                return Err(AttnError::InvalidArgument(format!("degenerate case {c}")));
            }
            Decay::new(c.lambda)?;
        }
        Ok(())
    }
}

/// Which pair of implementations a report compares.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Check {
    RecurrentForward,
    TiledForward,
    ChunkedForward,
    TiledDq,
    TiledDk,
    TiledDv,
    FiniteDiffDq,
    FiniteDiffDk,
    FiniteDiffDv,
}

impl Check {
    pub fn label(self) -> &'static str {
        match self {
            Check::RecurrentForward => "recurrent_forward vs oracle_forward",
            Check::TiledForward => "tiled_forward vs oracle_forward",
            Check::ChunkedForward => "chunked_forward vs oracle_forward",
            Check::TiledDq => "tiled_backward dQ vs oracle_backward",
            Check::TiledDk => "tiled_backward dK vs oracle_backward",
            Check::TiledDv => "tiled_backward dV vs oracle_backward",
            Check::FiniteDiffDq => "tiled_backward dQ vs finite differences",
            Check::FiniteDiffDk => "tiled_backward dK vs finite differences",
            Check::FiniteDiffDv => "tiled_backward dV vs finite differences",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SuiteReport {
    pub case: SuiteCase,
    pub check: Check,
    pub report: ErrorReport,
}

impl fmt::Display for SuiteReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}] {}: {}", self.case, self.check.label(), self.report)
    }
}

/// Deterministic ragged chunk lengths in `1..=max_len` summing to `n`.
pub fn ragged_partition(n: usize, max_len: usize, seed: Seed) -> Vec<usize> {
    let max_len = max_len.max(1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed.derive(99).0);
    let mut left = n;
    let mut out = Vec::new();
    while left > 0 {
        let len = rng.gen_range(1..=max_len).min(left);
        out.push(len);
        left -= len;
    }
    out
}

/// Runs `chunked_forward` over consecutive chunks of the given lengths.
pub fn stream_chunks<T: Scalar>(
    q: &Matrix<T>,
    k: &Matrix<T>,
    v: &Matrix<T>,
    decay: Decay,
    block: usize,
    lengths: &[usize],
) -> Result<(Matrix<T>, KvState<T>)> {
    let total: usize = lengths.iter().sum();
    if total != q.rows() {
        return Err(AttnError::InvalidArgument(format!(
            "chunk lengths sum to {total}, sequence has {} rows",
            q.rows()
        )));
    }
    let mut state = KvState::new(q.cols(), v.cols());
    let mut outs = Vec::with_capacity(lengths.len());
    let mut start = 0;
    for &len in lengths {
        let (o, next) = chunked_forward(
            &q.slice_rows(start, len)?,
            &k.slice_rows(start, len)?,
            &v.slice_rows(start, len)?,
            decay,
            block,
            &state,
        )?;
        outs.push(o);
        state = next;
        start += len;
    }
    Ok((Matrix::vstack(&outs)?, state))
}

fn equivalence_case<T: Scalar>(case: SuiteCase, tol: f64) -> Result<Vec<SuiteReport>> {
    let decay = Decay::new(case.lambda)?;
    let seed = Seed(case.seed);
    let (q, k, v) = attention_inputs::<T>(case.n, case.d, case.dv, seed);
    let d_out = upstream_grad::<T>(case.n, case.dv, seed);

    let reference = oracle_forward(&q, &k, &v, decay)?;
    let (recurrent, _) = recurrent_forward(&q, &k, &v, decay)?;
    let tiled = tiled_forward(&q, &k, &v, decay, case.block)?;
    let parts = ragged_partition(case.n, 2 * case.block + 1, seed);
    let (chunked, _) = stream_chunks(&q, &k, &v, decay, case.block, &parts)?;

    let grads_ref = oracle_backward(&q, &k, &v, &d_out, decay)?;
    let grads = tiled_backward(&q, &k, &v, &d_out, decay, case.block)?;

    let report = |check, cand: &Matrix<T>, refm: &Matrix<T>| -> Result<SuiteReport> {
        Ok(SuiteReport {
            case,
            check,
            report: compare(cand, refm, tol)?,
        })
    };
    Ok(vec![
        report(Check::RecurrentForward, &recurrent, &reference)?,
        report(Check::TiledForward, &tiled.output, &reference)?,
        report(Check::ChunkedForward, &chunked, &reference)?,
        report(Check::TiledDq, &grads.dq, &grads_ref.dq)?,
        report(Check::TiledDk, &grads.dk, &grads_ref.dk)?,
        report(Check::TiledDv, &grads.dv, &grads_ref.dv)?,
    ])
}

fn run_cases<F>(cfg: &SuiteConfig, f: F) -> Result<Vec<SuiteReport>>
where
    F: Fn(SuiteCase) -> Result<Vec<SuiteReport>> + Sync + Send,
{
    cfg.validate()?;
    let per_case: Vec<Result<Vec<SuiteReport>>> = cfg.cases.par_iter().map(|&c| f(c)).collect();
    let mut out = Vec::new();
    for r in per_case {
        out.extend(r?);
    }
    Ok(out)
}

/// For every case: recurrent, tiled and chunked forward against the full-mask
/// oracle, and tiled backward against the full-mask gradients. Six reports per
/// case, in grid order.
pub fn run_equivalence_suite(cfg: &SuiteConfig) -> Result<Vec<SuiteReport>> {
    let tol = cfg.tolerance;
    match cfg.precision {
        Precision::Double => run_cases(cfg, |c| equivalence_case::<f64>(c, tol)),
        Precision::Single => run_cases(cfg, |c| equivalence_case::<f32>(c, tol)),
    }
}

/// Tiled backward against [`finite_diff_grads`].
/// Three reports per case. Double precision only; cases larger than
/// `n = 24` or dimension 6 are rejected.
pub fn run_gradcheck_suite(cfg: &SuiteConfig) -> Result<Vec<SuiteReport>> {
    if cfg.precision != Precision::Double {
        return Err(AttnError::Precision {
            expected: Precision::Double.name(),
            found: cfg.precision.name().to_string(),
        });
    }
    if let Some(c) = cfg
        .cases
        .iter()
        .find(|c| c.n > GRADCHECK_MAX_N || c.d > GRADCHECK_MAX_DIM || c.dv > GRADCHECK_MAX_DIM)
    {
        return Err(AttnError::InvalidArgument(format!(
            "gradcheck size cap exceeded by {c} (limit n ≤ {GRADCHECK_MAX_N}, d, dv ≤ {GRADCHECK_MAX_DIM})"
        )));
    }
    let (tol, eps) = (cfg.tolerance, cfg.epsilon);
    run_cases(cfg, |case| {
        let decay = Decay::new(case.lambda)?;
        let seed = Seed(case.seed);
        let (q, k, v) = attention_inputs::<f64>(case.n, case.d, case.dv, seed);
        let d_out = upstream_grad::<f64>(case.n, case.dv, seed);
        let analytic = tiled_backward(&q, &k, &v, &d_out, decay, case.block)?;
        let numeric = finite_diff_grads(&q, &k, &v, &d_out, decay, eps)?;
        Ok(vec![
            SuiteReport {
                case,
                check: Check::FiniteDiffDq,
                report: compare(&analytic.dq, &numeric.dq, tol)?,
            },
            SuiteReport {
                case,
                check: Check::FiniteDiffDk,
                report: compare(&analytic.dk, &numeric.dk, tol)?,
            },
            SuiteReport {
                case,
                check: Check::FiniteDiffDv,
                report: compare(&analytic.dv, &numeric.dv, tol)?,
            },
        ])
    })
}

/// The report with the largest relative error, if any.
pub fn worst(reports: &[SuiteReport]) -> Option<&SuiteReport> {
    reports.iter().max_by(|a, b| {
        a.report
            .max_rel_error
            .partial_cmp(&b.report.max_rel_error)
            .unwrap_or(std::cmp::Ordering::Equal)
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lam(x: f64) -> Decay {
        Decay::new(x).unwrap()
    }

    #[test]
    fn compare_identical() {
        let m = crate::fixture::random_matrix::<f64>(4, 3, Seed(1));
        let r = compare(&m, &m, 0.0).unwrap();
        assert_eq!(r.max_rel_error, 0.0);
        assert_eq!(r.max_abs_error, 0.0);
        assert!(r.passed);
    }

    #[test]
    fn compare_floor_on_zero_reference() {
        let zero = Matrix::<f64>::zeros(3, 3);
        let tiny = Matrix::new(3, 3, vec![1e-15; 9]).unwrap();
        let r = compare(&tiny, &zero, 1e-2).unwrap();
        assert!(r.max_rel_error <= 1e-3);
        assert!(r.passed);
    }

    #[test]
    fn compare_locates_single_bad_element() {
        let reference = Matrix::<f64>::from_rows(&[&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0]]).unwrap();
        let mut data = reference.as_slice().to_vec();
        data[4] *= 1.1;
        let candidate = Matrix::new(2, 3, data).unwrap();
        let r = compare(&candidate, &reference, 1e-4).unwrap();
        assert!(!r.passed);
        assert_eq!(r.location, (1, 1));
        assert!((r.max_rel_error - 0.1).abs() < 1e-12);
    }

    #[test]
    fn compare_nan_fails() {
        let reference = Matrix::<f64>::from_rows(&[&[1.0, 2.0]]).unwrap();
        let candidate = Matrix::<f64>::from_rows(&[&[1.0, f64::NAN]]).unwrap();
        let r = compare(&candidate, &reference, 1.0).unwrap();
        assert!(!r.passed);
        assert_eq!(r.location, (0, 1));
    }

    #[test]
    fn compare_shape_mismatch() {
        let a = Matrix::<f64>::zeros(2, 3);
        let b = Matrix::<f64>::zeros(3, 2);
        assert!(compare(&a, &b, 1.0).is_err());
    }

    #[test]
    fn finite_diff_product_rule() {
        let col = |x: f64| Matrix::<f64>::column(&[x]).unwrap();
        let g =
            finite_diff_grads(&col(2.0), &col(3.0), &col(4.0), &col(1.0), lam(0.5), 1e-6).unwrap();
        assert!((g.dq.get(0, 0) - 12.0).abs() < 1e-7);
        assert!((g.dk.get(0, 0) - 8.0).abs() < 1e-7);
        assert!((g.dv.get(0, 0) - 6.0).abs() < 1e-7);
    }

    #[test]
    fn finite_diff_causal_ones() {
        let ones = Matrix::<f64>::column(&[1.0, 1.0]).unwrap();
        let g = finite_diff_grads(&ones, &ones, &ones, &ones, lam(1.0), 1e-6).unwrap();
        assert!((g.dq.get(0, 0) - 1.0).abs() < 1e-9);
        assert!((g.dq.get(1, 0) - 2.0).abs() < 1e-9);
    }

    #[test]
    fn finite_diff_matches_analytic_oracle() {
        let (q, k, v) = attention_inputs::<f64>(8, 3, 3, Seed(17));
        let d_out = upstream_grad::<f64>(8, 3, Seed(17));
        let fd = finite_diff_grads(&q, &k, &v, &d_out, lam(0.7), 1e-6).unwrap();
        let an = oracle_backward(&q, &k, &v, &d_out, lam(0.7)).unwrap();
        for (a, b) in [(&an.dq, &fd.dq), (&an.dk, &fd.dk), (&an.dv, &fd.dv)] {
            assert!(compare(a, b, 1e-6).unwrap().passed);
        }
    }

    #[test]
    fn finite_diff_rejects_single_precision_and_bad_epsilon() {
        let (q, k, v) = attention_inputs::<f32>(3, 2, 2, Seed(0));
        let d_out = upstream_grad::<f32>(3, 2, Seed(0));
        assert!(matches!(
            finite_diff_grads(&q, &k, &v, &d_out, lam(0.5), 1e-3),
            Err(AttnError::Precision { .. })
        ));
        let (q, k, v) = attention_inputs::<f64>(3, 2, 2, Seed(0));
        let d_out = upstream_grad::<f64>(3, 2, Seed(0));
        assert!(finite_diff_grads(&q, &k, &v, &d_out, lam(0.5), 0.0).is_err());
        assert!(finite_diff_grads(&q, &k, &v, &d_out, lam(0.5), -1e-6).is_err());
    }

    #[test]
    fn finite_diff_does_not_degrade_with_smaller_step() {
        for seed in 0..8u64 {
            let (q, k, v) = attention_inputs::<f64>(8, 3, 4, Seed(seed));
            let d_out = upstream_grad::<f64>(8, 4, Seed(seed));
            let decay = lam(0.7);
            let an = oracle_backward(&q, &k, &v, &d_out, decay).unwrap();
            let mismatch = |eps: f64| {
                let fd = finite_diff_grads(&q, &k, &v, &d_out, decay, eps).unwrap();
                [(&fd.dq, &an.dq), (&fd.dk, &an.dk), (&fd.dv, &an.dv)]
                    .iter()
                    .map(|(a, b)| compare(a, b, 1.0).unwrap().max_abs_error)
                    .fold(0.0, f64::max)
            };
            let (coarse, fine) = (mismatch(1e-5), mismatch(1e-6));
            // both may sit at the rounding floor of the analytic gradients
            assert!(
                fine <= 10.0 * coarse.max(4.0 * f64::EPSILON),
                "seed {seed}: {coarse:e} -> {fine:e}"
            );
        }
    }

    #[test]
    fn plain_finite_diff_of_tiled_forward() {
        for (n, d, dv, block, l, seed) in [(12, 4, 4, 5, 0.8, 3u64), (24, 6, 5, 7, 0.95, 9)] {
            let (q, k, v) = attention_inputs::<f64>(n, d, dv, Seed(seed));
            let d_out = upstream_grad::<f64>(n, dv, Seed(seed));
            let decay = lam(l);
            let fd = finite_diff_grads_with(&q, &k, &v, &d_out, 1e-6, |q, k, v| {
                Ok(tiled_forward(q, k, v, decay, block)?.output)
            })
            .unwrap();
            let an = tiled_backward(&q, &k, &v, &d_out, decay, block).unwrap();
            for (a, b) in [(&an.dq, &fd.dq), (&an.dk, &fd.dk), (&an.dv, &fd.dv)] {
                let r = compare(a, b, 1e-5).unwrap();
                assert!(r.passed, "n={n}: {r}");
            }
        }
    }

    #[test]
    fn empty_grid_gives_empty_reports() {
        let cfg = SuiteConfig {
            cases: vec![],
            ..SuiteConfig::small_grid()
        };
        assert!(run_equivalence_suite(&cfg).unwrap().is_empty());
        assert!(run_gradcheck_suite(&cfg).unwrap().is_empty());
    }

    #[test]
    fn equivalence_with_oversized_blocks() {
        let case = |n, block| SuiteCase {
            n,
            d: 3,
            dv: 5,
            block,
            lambda: 0.9,
            seed: 4,
        };
        let cfg = SuiteConfig {
            cases: vec![case(5, 8), case(7, 12), case(16, 64)],
            ..SuiteConfig::small_grid()
        };
        let reports = run_equivalence_suite(&cfg).unwrap();
        assert_eq!(reports.len(), 18);
        for r in &reports {
            assert!(r.report.passed, "{r}");
        }
    }

    #[test]
    fn gradcheck_cases() {
        let case = |n, d, block, lambda, seed| SuiteCase {
            n,
            d,
            dv: d,
            block,
            lambda,
            seed,
        };
        let cfg = SuiteConfig {
            cases: vec![case(12, 4, 5, 0.8, 3), case(1, 1, 1, 0.5, 0)],
            ..SuiteConfig::gradcheck_grid()
        };
        let reports = run_gradcheck_suite(&cfg).unwrap();
        assert_eq!(reports.len(), 6);
        for r in &reports {
            assert!(r.report.passed, "{r}");
        }
        for r in &reports[3..] {
            assert!(r.report.max_rel_error < 1e-12, "{r}");
        }
    }

    #[test]
    fn gradcheck_size_cap() {
        let cfg = SuiteConfig {
            cases: vec![SuiteCase {
                n: 1000,
                d: 64,
                dv: 64,
                block: 64,
                lambda: 0.9,
                seed: 0,
            }],
            ..SuiteConfig::gradcheck_grid()
        };
        let err = run_gradcheck_suite(&cfg).unwrap_err();
        assert!(err.to_string().contains("size cap"), "{err}");
    }

    #[test]
    fn invalid_lambda_in_grid_is_rejected() {
        let cfg = SuiteConfig {
            cases: vec![SuiteCase {
                n: 4,
                d: 2,
                dv: 2,
                block: 2,
                lambda: 1.5,
                seed: 0,
            }],
            ..SuiteConfig::small_grid()
        };
        assert!(matches!(
            run_equivalence_suite(&cfg),
            Err(AttnError::DecayDomain(_))
        ));
    }

    #[test]
    fn suites_are_deterministic() {
        let cfg = SuiteConfig {
            cases: SuiteConfig::small_grid()
                .cases
                .into_iter()
                .take(24)
                .collect(),
            ..SuiteConfig::small_grid()
        };
        assert_eq!(
            run_equivalence_suite(&cfg).unwrap(),
            run_equivalence_suite(&cfg).unwrap()
        );
    }

    #[test]
    fn grid_sizes() {
        assert_eq!(
            SuiteConfig::default_grid().cases.len(),
            8 * 3 * 2 * 4 * 4 * 2
        );
        assert!(SuiteConfig::gradcheck_grid()
            .cases
            .iter()
            .all(|c| c.n <= GRADCHECK_MAX_N && c.d <= GRADCHECK_MAX_DIM));
    }

    #[test]
    fn ragged_partition_sums() {
        let p = ragged_partition(100, 9, Seed(3));
        assert_eq!(p.iter().sum::<usize>(), 100);
        assert!(p.iter().all(|&l| (1..=9).contains(&l)));
        assert_eq!(p, ragged_partition(100, 9, Seed(3)));
    }
}
