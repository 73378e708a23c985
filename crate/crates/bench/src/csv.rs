//! CSV output for benchmark records.
//!
//! Out-of-memory rows carry the literal `OOM` in the time and scratch columns.

use std::io::Write;
use std::path::Path;

use crate::error::{BenchError, Result};
use crate::harness::BenchRecord;
use crate::harness::Outcome;

pub const CSV_HEADER: &str =
    "impl,direction,n,d,dv,B,lambda,reps,median_s,us_per_token,scratch_bytes";

/// Formats records as CSV text, one row per record in input order.
pub fn format_csv(records: &[BenchRecord]) -> Result<String> {
    if records.is_empty() {
        return Err(BenchError::NothingToEmit);
    }
    let mut out = String::with_capacity(64 * (records.len() + 1));
    out.push_str(CSV_HEADER);
    out.push('\n');
    for r in records {
        let (median, per_token, scratch) = match r.outcome {
            Outcome::Measured {
                median_seconds,
                per_token_microseconds,
                scratch_bytes,
            } => (
                format!("{median_seconds:.9}"),
                format!("{per_token_microseconds:.6}"),
                scratch_bytes.to_string(),
            ),
            Outcome::OutOfMemory { .. } => ("OOM".into(), "OOM".into(), "OOM".into()),
        };
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{}\n",
            r.impl_label(),
            r.direction,
            r.n,
            r.d,
            r.dv,
            r.block,
            r.lambda,
            r.reps,
            median,
            per_token,
            scratch
        ));
    }
    Ok(out)
}

/// Writes records to `path`, replacing any existing file.
pub fn emit_csv(records: &[BenchRecord], path: impl AsRef<Path>) -> Result<()> {
    let text = format_csv(records)?;
    let mut file = std::fs::File::create(path)?;
    file.write_all(text.as_bytes())?;
    file.flush()?;
    Ok(())
}

/// One parsed CSV row. Time and scratch are `None` on OOM rows.
#[derive(Debug, Clone, PartialEq)]
pub struct CsvRow {
    pub impl_label: String,
    pub direction: String,
    pub n: usize,
    pub d: usize,
    pub dv: usize,
    pub block: usize,
    pub lambda: f64,
    pub reps: usize,
    pub median_seconds: Option<f64>,
    pub per_token_microseconds: Option<f64>,
    pub scratch_bytes: Option<u64>,
}

fn field<T: std::str::FromStr>(line: usize, name: &str, raw: &str) -> Result<T> {
    raw.parse().map_err(|_| BenchError::Csv {
        line,
        message: format!("bad {name} '{raw}'"),
    })
}

fn optional<T: std::str::FromStr>(line: usize, name: &str, raw: &str) -> Result<Option<T>> {
    if raw == "OOM" {
        Ok(None)
    } else {
        field(line, name, raw).map(Some)
    }
}

pub fn parse_csv(text: &str) -> Result<Vec<CsvRow>> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h == CSV_HEADER => {}
        _ => {
            return Err(BenchError::Csv {
                line: 1,
                message: "missing or unexpected header".into(),
            })
        }
    }
    let mut rows = Vec::new();
    for (idx, raw) in lines {
        let line = idx + 1;
        if raw.is_empty() {
            continue;
        }
        let f: Vec<&str> = raw.split(',').collect();
        if f.len() != 11 {
            return Err(BenchError::Csv {
                line,
                message: format!("expected 11 fields, found {}", f.len()),
            });
        }
        rows.push(CsvRow {
            impl_label: f[0].to_string(),
            direction: f[1].to_string(),
            n: field(line, "n", f[2])?,
            d: field(line, "d", f[3])?,
            dv: field(line, "dv", f[4])?,
            block: field(line, "B", f[5])?,
            lambda: field(line, "lambda", f[6])?,
            reps: field(line, "reps", f[7])?,
            median_seconds: optional(line, "median_s", f[8])?,
            per_token_microseconds: optional(line, "us_per_token", f[9])?,
            scratch_bytes: optional(line, "scratch_bytes", f[10])?,
        });
    }
    Ok(rows)
}
