//! Seeded random fixtures and the plain-text matrix format.
//!
//! The text format is a header line `rows cols precision` followed by one
//! whitespace-separated row per line. Doubles are written with 17
//! significant digits, so a save/load round trip is exact.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{AttnError, Result};
use crate::matrix::Matrix;
use crate::scalar::{Precision, Scalar};

/// RNG seed for fixture generation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct Seed(pub u64);

impl Seed {
    /// An independent seed for sub-stream `stream` (splitmix64 finalizer).
    pub fn derive(self, stream: u64) -> Seed {
        let mut z = self
            .0
            .wrapping_add(stream.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        Seed(z ^ (z >> 31))
    }
}

impl From<u64> for Seed {
    fn from(v: u64) -> Self {
        Seed(v)
    }
}

/// `rows×cols` matrix with entries i.i.d. uniform in `[-1, 1]`.
///
/// # Panics
/// If either dimension is zero.
pub fn random_matrix<T: Scalar>(rows: usize, cols: usize, seed: Seed) -> Matrix<T> {
    // Mix the precision into the stream so f32 and f64 fixtures are unrelated draws.
    let stream = match T::PRECISION {
        Precision::Single => 1,
        Precision::Double => 2,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed.derive(stream).0);
    let data = (0..rows * cols)
        .map(|_| T::from_f64(rng.gen_range(-1.0..=1.0)))
        .collect();
    Matrix::new(rows, cols, data).expect("random_matrix: dimensions must be positive")
}

/// Seeded `(Q, K, V)` triple with shapes `n×d`, `n×d`, `n×dv`.
pub fn attention_inputs<T: Scalar>(
    n: usize,
    d: usize,
    dv: usize,
    seed: Seed,
) -> (Matrix<T>, Matrix<T>, Matrix<T>) {
    (
        random_matrix(n, d, seed.derive(10)),
        random_matrix(n, d, seed.derive(11)),
        random_matrix(n, dv, seed.derive(12)),
    )
}

/// Upstream cotangent `dO` matching [`attention_inputs`] for the same seed.
pub fn upstream_grad<T: Scalar>(n: usize, dv: usize, seed: Seed) -> Matrix<T> {
    random_matrix(n, dv, seed.derive(13))
}

pub fn format_fixture<T: Scalar>(m: &Matrix<T>) -> String {
    let mut out = String::with_capacity(m.rows() * m.cols() * 26 + 32);
    let _ = writeln!(out, "{} {} {}", m.rows(), m.cols(), T::PRECISION);
    for r in 0..m.rows() {
        let line = m
            .row(r)
            .iter()
            .map(|x| x.to_fixture_text())
            .collect::<Vec<_>>()
            .join(" ");
        out.push_str(&line);
        out.push('\n');
    }
    out
}

pub fn save_fixture<T: Scalar>(m: &Matrix<T>, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, format_fixture(m))?;
    Ok(())
}

/// Parses fixture text. The declared precision must match `T`.
pub fn parse_fixture<T: Scalar>(text: &str) -> Result<Matrix<T>> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l))
        .filter(|(_, l)| !l.trim().is_empty());

    let (hline, header) = lines
        .next()
        .ok_or_else(|| AttnError::parse(1, "missing header"))?;
    let fields: Vec<&str> = header.split_whitespace().collect();
    if fields.len() != 3 {
        return Err(AttnError::parse(
            hline,
            format!("malformed header '{header}': expected 'rows cols precision'"),
        ));
    }
    let parse_dim = |s: &str, what: &str| -> Result<usize> {
        match s.parse::<usize>() {
            Ok(v) if v > 0 => Ok(v),
            _ => Err(AttnError::parse(
                hline,
                format!("malformed header: {what} '{s}' is not a positive integer"),
            )),
        }
    };
    let rows = parse_dim(fields[0], "rows")?;
    let cols = parse_dim(fields[1], "cols")?;
    let precision: Precision = fields[2]
        .parse()
        .map_err(|e: String| AttnError::parse(hline, format!("malformed header: {e}")))?;
    if precision != T::PRECISION {
        return Err(AttnError::Precision {
            expected: T::PRECISION.name(),
            found: precision.name().to_string(),
        });
    }

    let mut data = Vec::with_capacity(rows * cols);
    let mut seen = 0;
    for (lineno, line) in lines {
        if seen == rows {
            return Err(AttnError::parse(
                lineno,
                format!("more than the declared {rows} rows"),
            ));
        }
        let before = data.len();
        for tok in line.split_whitespace() {
            let v: T = tok
                .parse()
                .map_err(|_| AttnError::parse(lineno, format!("invalid number '{tok}'")))?;
            if !v.is_finite() {
                return Err(AttnError::parse(
                    lineno,
                    format!("non-finite value '{tok}'"),
                ));
            }
            data.push(v);
        }
        let got = data.len() - before;
        if got != cols {
            return Err(AttnError::parse(
                lineno,
                format!("expected {cols} values, found {got}"),
            ));
        }
        seen += 1;
    }
    if seen != rows {
        return Err(AttnError::parse(
            text.lines().count() + 1,
            format!("expected {rows} rows, found {seen}"),
        ));
    }
    Matrix::new(rows, cols, data)
}

pub fn load_fixture<T: Scalar>(path: impl AsRef<Path>) -> Result<Matrix<T>> {
    let text = fs::read_to_string(path)?;
    parse_fixture(&text)
}
