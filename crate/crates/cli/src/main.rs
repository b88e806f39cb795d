use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use warp_core::{
    build_index, evaluate, exhaustive_maxsim, load_collection, load_index, load_qrels,
    load_queries, load_run, save_index, save_queries, synth_corpus, synth_queries, write_run,
    IndexConfig, IndexStats, NCentroids, Qrels, SearchParams, Searcher, TPrime,
};

#[derive(Parser)]
#[command(
    name = "warp",
    version,
    about = "Late-interaction retrieval over compressed residual indexes"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build an index directory from an embedding collection.
    Index(IndexArgs),
    /// Retrieve top-k documents for every query and write a run file.
    Search(SearchArgs),
    /// Score a run file against relevance judgments.
    Eval(EvalArgs),
    /// Print index statistics.
    Inspect(InspectArgs),
    /// Time retrieval across probe counts and thread counts.
    Bench(BenchArgs),
    /// Generate a synthetic collection, queries and judgments.
    Synth(SynthArgs),
}

#[derive(Args)]
struct IndexArgs {
    /// Embedding collection file.
    #[arg(long)]
    collection: PathBuf,
    /// Output index directory.
    #[arg(long)]
    out: PathBuf,
    /// Bits per residual dimension (2 or 4).
    #[arg(long, default_value_t = 4)]
    b: u8,
    /// `auto` or a centroid count.
    #[arg(long, default_value = "auto")]
    n_centroids: NCentroids,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 20)]
    kmeans_iters: usize,
}

#[derive(Args, Clone)]
struct SearchFlags {
    #[arg(long, default_value_t = 32)]
    n_probe: usize,
    /// `auto` or a cumulative cluster-size threshold.
    #[arg(long, default_value = "auto")]
    t_prime: TPrime,
    #[arg(long, default_value_t = 100_000)]
    t_prime_max: usize,
    #[arg(long, default_value_t = 10)]
    k: usize,
    #[arg(long, default_value_t = 1)]
    threads: usize,
}

impl SearchFlags {
    fn params(&self) -> SearchParams {
        SearchParams {
            n_probe: self.n_probe,
            t_prime: self.t_prime,
            t_prime_max: self.t_prime_max,
            k: self.k,
            threads: self.threads,
        }
    }
}

#[derive(Args)]
struct SearchArgs {
    #[arg(long)]
    index: PathBuf,
    /// Query embedding file.
    #[arg(long)]
    queries: PathBuf,
    /// Output run file.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    flags: SearchFlags,
    /// Print per-stage timings and work counters to stderr.
    #[arg(long)]
    timings: bool,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    run: PathBuf,
    #[arg(long)]
    qrels: PathBuf,
    /// Recall cutoffs.
    #[arg(long, value_delimiter = ',', default_value = "10,100")]
    cutoffs: Vec<usize>,
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct InspectArgs {
    #[arg(long)]
    index: PathBuf,
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long)]
    index: PathBuf,
    #[arg(long)]
    queries: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "1,4,16,32")]
    n_probe: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "1")]
    threads: Vec<usize>,
    #[arg(long, default_value_t = 10)]
    k: usize,
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct SynthArgs {
    /// Output directory for collection.emb, queries.qry and qrels.tsv.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[arg(long, default_value_t = 1000)]
    n_docs: usize,
    #[arg(long, default_value_t = 16)]
    min_tokens: usize,
    #[arg(long, default_value_t = 64)]
    max_tokens: usize,
    #[arg(long, default_value_t = 64)]
    n_latent: usize,
    #[arg(long, default_value_t = 50)]
    n_queries: usize,
    #[arg(long, default_value_t = 32)]
    query_tokens: usize,
    #[arg(long, default_value_t = 0.1)]
    query_noise: f32,
}

fn run_index(a: IndexArgs) -> Result<()> {
    let collection = load_collection(&a.collection)?;
    let config = IndexConfig {
        b: a.b,
        n_centroids: a.n_centroids,
        kmeans_iters: a.kmeans_iters,
        seed: a.seed,
        ..IndexConfig::default()
    };
    let index = build_index(&collection, &config)?;
    save_index(&index, &a.out)?;
    eprintln!(
        "indexed {} documents, {} tokens into {} clusters at {} bits",
        index.n_docs(),
        index.n_tokens(),
        index.n_centroids(),
        index.bits()
    );
    Ok(())
}

fn millis(d: Duration) -> f64 {
    d.as_secs_f64() * 1e3
}

fn run_search(a: SearchArgs) -> Result<()> {
    let index = load_index(&a.index)?;
    let queries = load_queries(&a.queries)?;
    let searcher = Searcher::new(&index, a.flags.params())?;
    let report = searcher.search_batch(&queries)?;
    let results: Vec<_> = report.queries.iter().map(|q| &q.results).collect();
    write_run(&results, &a.out)?;
    if a.timings {
        let t = &report.timings;
        let c = &report.counters;
        eprintln!("queries\t{}", report.queries.len());
        eprintln!(
            "candidate_generation_ms\t{:.3}",
            millis(t.candidate_generation)
        );
        eprintln!(
            "decompression_scoring_ms\t{:.3}",
            millis(t.decompression_scoring)
        );
        eprintln!("reduction_ms\t{:.3}", millis(t.reduction));
        eprintln!("centroid_scores\t{}", c.centroid_scores);
        eprintln!("tokens_scored\t{}", c.tokens_scored);
    }
    Ok(())
}

fn run_eval(a: EvalArgs) -> Result<()> {
    if a.cutoffs.iter().any(|&k| k == 0) {
        bail!("recall cutoffs must be positive");
    }
    let run = load_run(&a.run)?;
    let qrels = load_qrels(&a.qrels)?;
    let metrics = evaluate(&run, &qrels, &a.cutoffs)?;
    if a.json {
        println!("{}", serde_json::to_string_pretty(&metrics)?);
    } else {
        print!("{}", metrics.to_table());
    }
    Ok(())
}

fn run_inspect(a: InspectArgs) -> Result<()> {
    let index = load_index(&a.index)?;
    let stats = IndexStats::of(&index);
    if a.json {
        println!("{}", serde_json::to_string_pretty(&stats)?);
        return Ok(());
    }
    println!("documents\t{}", stats.n_docs);
    println!("tokens\t{}", stats.n_tokens);
    println!("centroids\t{}", stats.n_centroids);
    println!("bits\t{}", stats.bits);
    println!(
        "residual_bytes_per_token\t{}",
        stats.residual_bytes_per_token
    );
    println!("residual_bytes\t{}", stats.residual_bytes);
    println!("total_bytes\t{}", stats.total_bytes);
    println!("empty_clusters\t{}", stats.empty_clusters);
    println!(
        "cluster_size min/mean/max\t{}/{:.1}/{}",
        stats.min_cluster_size, stats.mean_cluster_size, stats.max_cluster_size
    );
    println!("cluster size histogram:");
    for bin in &stats.cluster_size_histogram {
        println!("  {:>8}..{:<8} {}", bin.lo, bin.hi, bin.count);
    }
    Ok(())
}

#[derive(Serialize)]
struct BenchRow {
    n_probe: usize,
    threads: usize,
    queries: usize,
    mean_candidate_generation_ms: f64,
    mean_decompression_scoring_ms: f64,
    mean_reduction_ms: f64,
    mean_total_ms: f64,
    mean_tokens_scored: f64,
}

fn run_bench(a: BenchArgs) -> Result<()> {
    let index = load_index(&a.index)?;
    let queries = load_queries(&a.queries)?;
    if queries.is_empty() {
        bail!("query file {} is empty", a.queries.display());
    }
    let n = queries.len() as f64;
    let mut rows = Vec::new();
    for &threads in &a.threads {
        for &n_probe in &a.n_probe {
            let params = SearchParams {
                n_probe,
                threads,
                k: a.k,
                ..SearchParams::default()
            };
            let report = Searcher::new(&index, params)?.search_batch(&queries)?;
            let t = report.timings;
            rows.push(BenchRow {
                n_probe,
                threads,
                queries: queries.len(),
                mean_candidate_generation_ms: millis(t.candidate_generation) / n,
                mean_decompression_scoring_ms: millis(t.decompression_scoring) / n,
                mean_reduction_ms: millis(t.reduction) / n,
                mean_total_ms: millis(t.total()) / n,
                mean_tokens_scored: report.counters.tokens_scored as f64 / n,
            });
        }
    }
    if a.json {
        println!("{}", serde_json::to_string_pretty(&rows)?);
        return Ok(());
    }
    println!("n_probe\tthreads\tcandgen_ms\tscore_ms\treduce_ms\ttotal_ms\ttokens_scored");
    for r in &rows {
        println!(
            "{}\t{}\t{:.3}\t{:.3}\t{:.3}\t{:.3}\t{:.0}",
            r.n_probe,
            r.threads,
            r.mean_candidate_generation_ms,
            r.mean_decompression_scoring_ms,
            r.mean_reduction_ms,
            r.mean_total_ms,
            r.mean_tokens_scored
        );
    }
    Ok(())
}

fn run_synth(a: SynthArgs) -> Result<()> {
    if a.min_tokens == 0 || a.min_tokens > a.max_tokens {
        bail!("need 1 <= min-tokens <= max-tokens");
    }
    if a.query_tokens == 0 || a.query_tokens > warp_core::QUERY_MAXLEN {
        bail!("query-tokens must be in 1..={}", warp_core::QUERY_MAXLEN);
    }
    if a.n_docs == 0 || a.n_latent == 0 {
        bail!("n-docs and n-latent must be positive");
    }
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let collection = synth_corpus(a.seed, a.n_docs, (a.min_tokens, a.max_tokens), a.n_latent);
    let (queries, _) = synth_queries(
        a.seed.wrapping_add(1),
        &collection,
        a.n_queries,
        (a.query_tokens, a.query_tokens),
        a.query_noise,
    );
    // the relevant document is the exact late-interaction nearest neighbour
    let mut qrels = Qrels::new();
    for (i, q) in queries.iter().enumerate() {
        let best = exhaustive_maxsim(&collection, q).entries()[0].0;
        qrels.insert(i.to_string(), best.to_string(), 1);
    }
    collection.save(a.out.join("collection.emb"))?;
    save_queries(&queries, a.out.join("queries.qry"))?;
    let qrels_path = a.out.join("qrels.tsv");
    fs::write(&qrels_path, qrels.to_tsv())
        .with_context(|| format!("writing {}", qrels_path.display()))?;
    eprintln!(
        "wrote {} documents ({} tokens) and {} queries to {}",
        collection.n_docs(),
        collection.n_tokens(),
        queries.len(),
        a.out.display()
    );
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Index(a) => run_index(a),
        Command::Search(a) => run_search(a),
        Command::Eval(a) => run_eval(a),
        Command::Inspect(a) => run_inspect(a),
        Command::Bench(a) => run_bench(a),
        Command::Synth(a) => run_synth(a),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
