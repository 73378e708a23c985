use std::process::{Command, Output};

fn lightning(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lightning"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn verify_small_grid_passes() {
    let o = lightning(&["verify", "--grid", "small"]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    assert!(stdout(&o).contains("worst:"));
    assert!(stdout(&o).contains("0 failed"));
}

#[test]
fn verify_reports_failure_with_exit_one() {
    // nothing but exact agreement passes a zero tolerance
    let o = lightning(&["verify", "--grid", "small", "--tolerance", "0"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stdout(&o).contains("FAIL"));
}

#[test]
fn gradcheck_passes() {
    let o = lightning(&["gradcheck"]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    let bad = lightning(&["gradcheck", "--epsilon", "0"]);
    assert_eq!(bad.status.code(), Some(2));
}

#[test]
fn bench_needs_four_points() {
    let o = lightning(&[
        "bench",
        "--impls",
        "tiled",
        "--lens",
        "8192,16384",
        "--dim",
        "64",
        "--block",
        "64",
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("minimum 4 points"), "{}", stderr(&o));
    assert!(stderr(&o).contains("Usage"));
}

#[test]
fn bench_rejects_non_doubling_and_unsupported() {
    let o = lightning(&[
        "bench",
        "--impls",
        "tiled",
        "--lens",
        "64,128,256,400",
        "--dim",
        "4",
        "--block",
        "8",
    ]);
    assert_eq!(o.status.code(), Some(2));
    let o = lightning(&[
        "bench",
        "--impls",
        "recurrent",
        "--lens",
        "64,128,256,512",
        "--dim",
        "4",
        "--block",
        "8",
        "--direction",
        "backward",
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("does not implement"));
}

fn data_columns(csv: &str) -> Vec<String> {
    // everything except median_s and us_per_token, which are wall-clock readings
    csv.lines()
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            [&f[..8], &f[10..]].concat().join(",")
        })
        .collect()
}

#[test]
fn bench_writes_csv_and_is_deterministic_apart_from_timings() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    let args = |out: &str| {
        vec![
            "bench".to_string(),
            "--impls".into(),
            "oracle,chunked".into(),
            "--lens".into(),
            "64,128,256,512".into(),
            "--dim".into(),
            "4".into(),
            "--block".into(),
            "8".into(),
            "--out".into(),
            out.into(),
        ]
    };
    for path in [&a, &b] {
        let argv = args(path.to_str().unwrap());
        let argv: Vec<&str> = argv.iter().map(String::as_str).collect();
        let o = lightning(&argv);
        // no tiled implementation requested, so there is no verdict to fail
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    }
    let text_a = std::fs::read_to_string(&a).unwrap();
    let text_b = std::fs::read_to_string(&b).unwrap();
    assert_eq!(text_a.lines().count(), 9);
    assert!(text_a
        .starts_with("impl,direction,n,d,dv,B,lambda,reps,median_s,us_per_token,scratch_bytes\n"));
    assert_eq!(data_columns(&text_a), data_columns(&text_b));
    let rows = lightning_bench::parse_csv(&text_a).unwrap();
    assert!(rows.iter().all(|r| r.median_seconds.is_some()));
}

#[test]
fn bench_tiled_exit_code_follows_verdict() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("t.csv");
    let o = lightning(&[
        "bench",
        "--impls",
        "tiled",
        "--lens",
        "1024,2048,4096,8192",
        "--dim",
        "16",
        "--block",
        "32",
        "--out",
        out.to_str().unwrap(),
    ]);
    let text = stdout(&o);
    let linear = text.contains("tiled: linear-like");
    assert_eq!(o.status.code(), Some(if linear { 0 } else { 1 }), "{text}");
    assert!(out.exists(), "CSV is written whatever the verdict");
}

#[test]
fn bench_reports_oom_rows() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("oom.csv");
    let o = lightning(&[
        "bench",
        "--impls",
        "oracle",
        "--lens",
        "512,1024,2048,4096",
        "--dim",
        "8",
        "--block",
        "8",
        "--memory-budget",
        "20000000",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0));
    let text = std::fs::read_to_string(&out).unwrap();
    assert!(
        text.lines().last().unwrap().ends_with("OOM,OOM,OOM"),
        "{text}"
    );
    assert!(stdout(&o).contains("oracle: inconclusive"));
}

#[test]
fn sweep_block_names_fastest() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("blocks.csv");
    let o = lightning(&[
        "sweep-block",
        "--len",
        "512",
        "--dim",
        "8",
        "--blocks",
        "1,8,64,512",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).contains("fastest block size"));
    assert_eq!(std::fs::read_to_string(&out).unwrap().lines().count(), 5);
}

#[test]
fn stream_demo_confirms_match() {
    let o = lightning(&[
        "stream-demo",
        "--dim",
        "8",
        "--chunk",
        "50",
        "--chunks",
        "4",
    ]);
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    assert!(text.contains("final state checksum"));
    assert!(text.contains("match:"), "{text}");
    let again = lightning(&[
        "stream-demo",
        "--dim",
        "8",
        "--chunk",
        "50",
        "--chunks",
        "4",
    ]);
    assert_eq!(stdout(&again), text);
}

#[test]
fn usage_errors_exit_two() {
    assert_eq!(lightning(&[]).status.code(), Some(2));
    assert_eq!(lightning(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(lightning(&["verify", "--bogus"]).status.code(), Some(2));
    assert_eq!(
        lightning(&["verify", "--grid", "huge"]).status.code(),
        Some(2)
    );
    assert_eq!(
        lightning(&["stream-demo", "--dim", "8", "--chunk", "0", "--chunks", "4"])
            .status
            .code(),
        Some(2)
    );
    assert_eq!(
        lightning(&[
            "stream-demo",
            "--dim",
            "8",
            "--chunk",
            "5",
            "--chunks",
            "4",
            "--lambda",
            "1.5"
        ])
        .status
        .code(),
        Some(2)
    );
}
