//! `lightning`: verification suites, benchmarks and a streaming demo.
//!
//! Exit codes: 0 on success, 1 when a suite or check fails, 2 on usage errors.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, CommandFactory, Parser, Subcommand};
use lightning_bench::{
    block_size_sweep, emit_csv, scaling_sweep, BenchError, BenchOptions, BenchRecord,
    CountingAllocator, Direction, ImplId, Scaling, SweepShape,
};
use lightning_core::verify::{
    compare, run_equivalence_suite, run_gradcheck_suite, worst, SuiteConfig, SuiteReport,
};
use lightning_core::{
    attention_inputs, chunked_forward, tiled_forward, AttnError, Decay, Execution, KvState,
    Precision, Seed,
};

#[global_allocator]
static ALLOCATOR: CountingAllocator = CountingAllocator;

#[derive(Parser)]
#[command(
    name = "lightning",
    version,
    about = "Block-tiled decayed linear attention toolkit"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Compare every implementation against the full-mask reference over a grid.
    Verify(VerifyArgs),
    /// Compare tiled gradients against central finite differences.
    Gradcheck(GradcheckArgs),
    /// Time implementations across doubling sequence lengths and classify their scaling.
    Bench(BenchArgs),
    /// Time the tiled kernel across block sizes.
    SweepBlock(SweepBlockArgs),
    /// Stream random chunks through the chunked kernel and check against a one-shot pass.
    StreamDemo(StreamDemoArgs),
}

#[derive(Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
enum Grid {
    Small,
    Default,
}

#[derive(Args)]
struct VerifyArgs {
    #[arg(long, default_value_t = 1e-10)]
    tolerance: f64,
    /// Added to every case's seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value_t = Grid::Small)]
    grid: Grid,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 1e-6)]
    epsilon: f64,
    #[arg(long, default_value_t = 1e-5)]
    tolerance: f64,
    /// Added to every case's seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct TimingArgs {
    #[arg(long, default_value_t = 3)]
    reps: usize,
    #[arg(long, default_value_t = 0.9)]
    lambda: f64,
    #[arg(long, default_value = "single", value_parser = parse_precision)]
    precision: Precision,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Independent heads per pass (tiled only).
    #[arg(long, default_value_t = 1)]
    heads: usize,
    /// Run heads on the thread pool instead of one after another.
    #[arg(long)]
    parallel: bool,
    /// Memory budget in bytes; passes estimated above it are reported as OOM.
    #[arg(long)]
    memory_budget: Option<u64>,
}

#[derive(Args)]
struct BenchArgs {
    /// Comma-separated subset of oracle,recurrent,tiled,chunked.
    #[arg(long, value_delimiter = ',', required = true, value_parser = parse_impl)]
    impls: Vec<ImplId>,
    /// Comma-separated sequence lengths, each double the previous.
    #[arg(long, value_delimiter = ',', required = true)]
    lens: Vec<usize>,
    #[arg(long)]
    dim: usize,
    /// Value dimension; defaults to --dim.
    #[arg(long)]
    value_dim: Option<usize>,
    #[arg(long)]
    block: usize,
    /// forward, backward or fwd+bwd. Defaults to fwd+bwd where supported.
    #[arg(long, value_parser = parse_direction)]
    direction: Option<Direction>,
    /// Rows per chunk for the chunked implementation; defaults to 16 blocks.
    #[arg(long)]
    chunk: Option<usize>,
    #[arg(long, default_value = "bench.csv")]
    out: PathBuf,
    #[command(flatten)]
    timing: TimingArgs,
}

#[derive(Args)]
struct SweepBlockArgs {
    #[arg(long)]
    len: usize,
    #[arg(long)]
    dim: usize,
    #[arg(long)]
    value_dim: Option<usize>,
    #[arg(long, value_delimiter = ',', required = true)]
    blocks: Vec<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    timing: TimingArgs,
}

#[derive(Args)]
struct StreamDemoArgs {
    #[arg(long)]
    dim: usize,
    /// Rows per chunk.
    #[arg(long)]
    chunk: usize,
    #[arg(long)]
    chunks: usize,
    #[arg(long, default_value_t = 0.9)]
    lambda: f64,
    #[arg(long, default_value_t = 16)]
    block: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn parse_impl(s: &str) -> Result<ImplId, String> {
    s.parse().map_err(|e: BenchError| e.to_string())
}

fn parse_direction(s: &str) -> Result<Direction, String> {
    s.parse().map_err(|e: BenchError| e.to_string())
}

fn parse_precision(s: &str) -> Result<Precision, String> {
    s.parse()
}

/// Error split by exit code.
enum Failure {
    Usage(String),
    Runtime(String),
}

impl From<BenchError> for Failure {
    fn from(e: BenchError) -> Self {
        match e {
            BenchError::InvalidArgument(_) | BenchError::Unsupported { .. } => {
                Failure::Usage(e.to_string())
            }
            BenchError::Kernel(AttnError::InvalidArgument(_) | AttnError::DecayDomain(_)) => {
                Failure::Usage(e.to_string())
            }
            other => Failure::Runtime(other.to_string()),
        }
    }
}

impl From<AttnError> for Failure {
    fn from(e: AttnError) -> Self {
        Failure::from(BenchError::Kernel(e))
    }
}

type Outcome = Result<bool, Failure>;

fn print_reports(reports: &[SuiteReport]) -> bool {
    let failures: Vec<&SuiteReport> = reports.iter().filter(|r| !r.report.passed).collect();
    for f in failures.iter().take(20) {
        println!("{f}");
    }
    if failures.len() > 20 {
        println!("... {} more failures", failures.len() - 20);
    }
    if let Some(w) = worst(reports) {
        println!("worst: {w}");
    }
    println!("{} comparisons, {} failed", reports.len(), failures.len());
    failures.is_empty()
}

fn verify(args: &VerifyArgs) -> Outcome {
    let base = match args.grid {
        Grid::Small => SuiteConfig::small_grid(),
        Grid::Default => SuiteConfig::default_grid(),
    };
    let cfg = SuiteConfig {
        tolerance: args.tolerance,
        ..base
    }
    .with_seed_offset(args.seed);
    let reports = run_equivalence_suite(&cfg)?;
    Ok(print_reports(&reports))
}

fn gradcheck(args: &GradcheckArgs) -> Outcome {
    if args.epsilon.is_nan() || args.epsilon <= 0.0 {
        return Err(Failure::Usage(format!(
            "epsilon must be positive, got {}",
            args.epsilon
        )));
    }
    let cfg = SuiteConfig {
        epsilon: args.epsilon,
        tolerance: args.tolerance,
        ..SuiteConfig::gradcheck_grid()
    }
    .with_seed_offset(args.seed);
    let reports = run_gradcheck_suite(&cfg)?;
    Ok(print_reports(&reports))
}

fn options(t: &TimingArgs, chunk: Option<usize>) -> BenchOptions {
    BenchOptions {
        seed: t.seed,
        memory_budget: t.memory_budget,
        chunk_len: chunk,
        heads: t.heads,
        execution: if t.parallel {
            Execution::Parallel
        } else {
            Execution::Sequential
        },
    }
}

fn print_records(records: &[BenchRecord]) {
    println!(
        "{:<16} {:<8} {:>8} {:>5} {:>13} {:>13} {:>14}",
        "impl", "dir", "n", "B", "median_s", "us/token", "scratch_bytes"
    );
    for r in records {
        let (t, p, s) = match (
            r.median_seconds(),
            r.per_token_microseconds(),
            r.scratch_bytes(),
        ) {
            (Some(t), Some(p), Some(s)) => (format!("{t:.6}"), format!("{p:.4}"), s.to_string()),
            _ => ("OOM".into(), "OOM".into(), "OOM".into()),
        };
        println!(
            "{:<16} {:<8} {:>8} {:>5} {:>13} {:>13} {:>14}",
            r.impl_label(),
            r.direction.name(),
            r.n,
            r.block,
            t,
            p,
            s
        );
    }
}

fn bench(args: &BenchArgs) -> Outcome {
    let decay = Decay::new(args.timing.lambda)?;
    let shape = SweepShape {
        d: args.dim,
        dv: args.value_dim.unwrap_or(args.dim),
        block: args.block,
        decay,
        precision: args.timing.precision,
    };
    let impls: Vec<(ImplId, Direction)> = args
        .impls
        .iter()
        .map(|&id| {
            let default = match id {
                ImplId::Oracle | ImplId::Tiled => Direction::ForwardBackward,
                ImplId::Recurrent | ImplId::Chunked => Direction::Forward,
            };
            (id, args.direction.unwrap_or(default))
        })
        .collect();
    let opts = options(&args.timing, args.chunk);
    let (records, verdicts) = scaling_sweep(&impls, &args.lens, shape, args.timing.reps, &opts)?;
    emit_csv(&records, &args.out)?;
    print_records(&records);
    for v in &verdicts {
        println!("{v}");
    }
    println!("wrote {}", args.out.display());
    let tiled_ok = verdicts
        .iter()
        .filter(|v| v.impl_id == ImplId::Tiled)
        .all(|v| v.classification == Scaling::LinearLike);
    Ok(tiled_ok)
}

fn sweep_block(args: &SweepBlockArgs) -> Outcome {
    let decay = Decay::new(args.timing.lambda)?;
    let shape = SweepShape {
        d: args.dim,
        dv: args.value_dim.unwrap_or(args.dim),
        block: 0,
        decay,
        precision: args.timing.precision,
    };
    let opts = options(&args.timing, None);
    let records = block_size_sweep(args.len, &args.blocks, shape, args.timing.reps, &opts)?;
    print_records(&records);
    let fastest = records
        .iter()
        .filter_map(|r| r.median_seconds().map(|t| (r.block, t)))
        .min_by(|a, b| a.1.total_cmp(&b.1));
    if let Some((b, t)) = fastest {
        println!("fastest block size on this host: B={b} ({t:.6} s)");
    }
    if let Some(out) = &args.out {
        emit_csv(&records, out)?;
        println!("wrote {}", out.display());
    }
    Ok(true)
}

fn stream_demo(args: &StreamDemoArgs) -> Outcome {
    if args.dim == 0 || args.chunk == 0 || args.chunks == 0 || args.block == 0 {
        return Err(Failure::Usage(
            "--dim, --chunk, --chunks and --block must be positive".into(),
        ));
    }
    let decay = Decay::new(args.lambda)?;
    let n = args.chunk * args.chunks;
    let (q, k, v) = attention_inputs::<f64>(n, args.dim, args.dim, Seed(args.seed));

    let mut state = KvState::<f64>::new(args.dim, args.dim);
    let mut pieces = Vec::with_capacity(args.chunks);
    for c in 0..args.chunks {
        let start = c * args.chunk;
        let (o, next) = chunked_forward(
            &q.slice_rows(start, args.chunk)?,
            &k.slice_rows(start, args.chunk)?,
            &v.slice_rows(start, args.chunk)?,
            decay,
            args.block,
            &state,
        )?;
        pieces.push(o);
        state = next;
    }
    let streamed = lightning_core::Matrix::vstack(&pieces)?;
    let checksum: f64 = state.kv.as_slice().iter().sum();
    println!(
        "streamed {} chunks of {} rows (n={n}, d={}, λ={})",
        args.chunks, args.chunk, args.dim, args.lambda
    );
    println!("final state checksum: {checksum:.12e}");

    let one_shot = tiled_forward(&q, &k, &v, decay, args.block)?;
    let out_report = compare(&streamed, &one_shot.output, 1e-10)?;
    let state_report = compare(&state.kv, &one_shot.final_kv.kv, 1e-10)?;
    let ok = out_report.passed && state_report.passed && state.tokens_absorbed == n;
    if ok {
        println!(
            "match: streamed outputs and final state equal the one-shot recompute \
             (max rel error {:.3e} / {:.3e})",
            out_report.max_rel_error, state_report.max_rel_error
        );
    } else {
        println!("MISMATCH: outputs {out_report}; state {state_report}");
    }
    Ok(ok)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Verify(a) => verify(a),
        Command::Gradcheck(a) => gradcheck(a),
        Command::Bench(a) => bench(a),
        Command::SweepBlock(a) => sweep_block(a),
        Command::StreamDemo(a) => stream_demo(a),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(Failure::Usage(msg)) => {
            let mut cmd = Cli::command();
            cmd.build();
            let name = match &cli.command {
                Command::Verify(_) => "verify",
                Command::Gradcheck(_) => "gradcheck",
                Command::Bench(_) => "bench",
                Command::SweepBlock(_) => "sweep-block",
                Command::StreamDemo(_) => "stream-demo",
            };
            let sub = cmd.find_subcommand_mut(name).expect("known subcommand");
            // clap prints the usage line and exits with status 2
            sub.error(ErrorKind::ValueValidation, msg).exit()
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}
