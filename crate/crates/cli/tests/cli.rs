use std::ffi::OsStr;
use std::fmt::Debug;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn warp<S: AsRef<OsStr>>(args: &[S]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_warp"))
        .args(args)
        .output()
        .expect("spawn warp")
}

fn ok<S: AsRef<OsStr> + Debug>(args: &[S]) -> String {
    let out = warp(args);
    assert!(
        out.status.success(),
        "warp {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// Synthetic collection plus a b=4 index with 64 centroids.
fn fixture() -> TempDir {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&[
        "synth",
        "--out",
        p(d),
        "--n-docs",
        "200",
        "--min-tokens",
        "4",
        "--max-tokens",
        "8",
        "--n-latent",
        "8",
        "--n-queries",
        "12",
        "--query-tokens",
        "8",
    ]);
    ok(&[
        "index",
        "--collection",
        p(&d.join("collection.emb")),
        "--out",
        p(&d.join("index")),
        "--b",
        "4",
        "--n-centroids",
        "64",
        "--seed",
        "3",
    ]);
    dir
}

fn search(d: &Path, out: &str, extra: &[&str]) -> String {
    let run = d.join(out);
    let mut args = vec![
        "search".to_owned(),
        "--index".to_owned(),
        p(&d.join("index")).to_owned(),
        "--queries".to_owned(),
        p(&d.join("queries.qry")).to_owned(),
        "--out".to_owned(),
        p(&run).to_owned(),
    ];
    args.extend(extra.iter().map(|s| s.to_string()));
    ok(&args);
    std::fs::read_to_string(run).unwrap()
}

#[test]
fn inspect_reports_residual_payload() {
    let dir = fixture();
    let index = dir.path().join("index");
    let json: serde_json::Value =
        serde_json::from_str(&ok(&["inspect", "--index", p(&index), "--json"])).unwrap();
    assert_eq!(json["residual_bytes_per_token"], 64);
    assert_eq!(json["n_centroids"], 64);
    let hist = json["cluster_size_histogram"].as_array().unwrap();
    let counted: u64 = hist.iter().map(|b| b["count"].as_u64().unwrap()).sum();
    assert_eq!(counted, 64);
    let text = ok(&["inspect", "--index", p(&index)]);
    assert!(text.contains("residual_bytes_per_token\t64"), "{text}");
}

#[test]
fn search_writes_bounded_run_file() {
    let dir = fixture();
    let run = search(dir.path(), "run.tsv", &["--n-probe", "32", "--k", "10"]);
    let mut per_query = std::collections::BTreeMap::<String, Vec<usize>>::new();
    for line in run.lines() {
        let f: Vec<&str> = line.split('\t').collect();
        assert_eq!(f.len(), 4, "{line}");
        let (_, decimals) = f[3].split_once('.').unwrap();
        assert_eq!(decimals.len(), 6, "{line}");
        per_query
            .entry(f[0].to_owned())
            .or_default()
            .push(f[2].parse().unwrap());
    }
    assert_eq!(per_query.len(), 12);
    for ranks in per_query.values() {
        assert!(ranks.len() <= 10);
        assert_eq!(*ranks, (1..=ranks.len()).collect::<Vec<_>>());
    }
    assert!(run.ends_with('\n'));
}

#[test]
fn run_files_are_byte_identical_across_threads_and_repeats() {
    let dir = fixture();
    let a = search(dir.path(), "a.tsv", &["--n-probe", "8", "--threads", "1"]);
    let b = search(dir.path(), "b.tsv", &["--n-probe", "8", "--threads", "4"]);
    let c = search(dir.path(), "c.tsv", &["--n-probe", "8", "--threads", "1"]);
    assert_eq!(a, b);
    assert_eq!(a, c);
}

#[test]
fn eval_matches_in_process_metrics() {
    let dir = fixture();
    let d = dir.path();
    search(d, "run.tsv", &["--n-probe", "16", "--k", "100"]);
    let (run, qrels) = (d.join("run.tsv"), d.join("qrels.tsv"));
    let cli: serde_json::Value = serde_json::from_str(&ok(&[
        "eval",
        "--run",
        p(&run),
        "--qrels",
        p(&qrels),
        "--cutoffs",
        "10,100",
        "--json",
    ]))
    .unwrap();
    let metrics = warp_core::evaluate(
        &warp_core::load_run(&run).unwrap(),
        &warp_core::load_qrels(&qrels).unwrap(),
        &[10, 100],
    )
    .unwrap();
    assert_eq!(cli, serde_json::to_value(&metrics).unwrap());

    let table = ok(&["eval", "--run", p(&run), "--qrels", p(&qrels)]);
    assert!(table.contains("ndcg@10\t"), "{table}");
}

#[test]
fn bench_reports_each_configuration() {
    let dir = fixture();
    let d = dir.path();
    let out = ok(&[
        "bench",
        "--index",
        p(&d.join("index")),
        "--queries",
        p(&d.join("queries.qry")),
        "--n-probe",
        "1,8",
        "--threads",
        "1,2",
        "--json",
    ]);
    let rows: Vec<serde_json::Value> = serde_json::from_str(&out).unwrap();
    assert_eq!(rows.len(), 4);
    for r in &rows {
        assert!(r["mean_total_ms"].as_f64().unwrap() >= 0.0);
    }
}

#[test]
fn errors_exit_nonzero_with_diagnostic() {
    let dir = fixture();
    let d = dir.path();
    let too_many = warp(&[
        "search",
        "--index",
        p(&d.join("index")),
        "--queries",
        p(&d.join("queries.qry")),
        "--out",
        p(&d.join("x.tsv")),
        "--n-probe",
        "65",
    ]);
    assert!(!too_many.status.success());
    assert!(String::from_utf8_lossy(&too_many.stderr).contains("n_probe"));

    let missing = warp(&["inspect", "--index", p(&d.join("nope"))]);
    assert!(!missing.status.success());
    assert!(String::from_utf8_lossy(&missing.stderr).starts_with("error:"));

    let usage = warp(&["index", "--b", "4"]);
    assert!(!usage.status.success());

    let bad_b = warp(&[
        "index",
        "--collection",
        p(&d.join("collection.emb")),
        "--out",
        p(&d.join("i3")),
        "--b",
        "3",
    ]);
    assert!(!bad_b.status.success());
}
