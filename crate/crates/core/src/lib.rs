//! Multi-vector late-interaction retrieval over a compressed residual index.
//!
//! Document token embeddings are clustered and stored as a centroid id plus a
//! bit-packed quantized residual. At query time each query token probes its
//! closest clusters, candidates are scored straight from the packed codes
//! through per-query lookup tables, and partial scores are merged in two
//! stages into document scores. Document-query token pairs that were never
//! retrieved get an imputed similarity derived from the probe ranking.
//!
//! ```no_run
//! use warp_core::{build_index, load_queries, search, IndexConfig, SearchParams};
//!
//! let collection = warp_core::load_collection("docs.emb")?;
//! let index = build_index(&collection, &IndexConfig::default())?;
//! let queries = load_queries("queries.qry")?;
//! let report = search(&index, &queries[0], &SearchParams::default())?;
//! for (doc, score) in report.results.entries() {
//!     println!("{doc}\t{score}");
//! }
//! # Ok::<(), warp_core::Error>(())
//! ```

pub mod codes;
pub mod corpus;
pub mod engine;
pub mod error;
pub mod index;
pub mod kernel;
pub mod linalg;
pub mod metrics;
pub mod qrels;
pub mod reduce;
pub mod runfile;
pub mod select;
pub mod stride;

pub use corpus::{
    load_collection, load_queries, save_queries, synth_corpus, synth_queries, EmbeddingCollection,
    QueryEmbeddings, DIM, NORM_TOLERANCE, QUERY_MAXLEN,
};
pub use engine::{
    search, search_batch, QueryReport, SearchCounters, SearchReport, Searcher, StageTimings,
};
pub use error::{Error, Result};
pub use index::{
    build_index, load_index, save_index, BucketWeights, CentroidTable, CompressedIndex,
    IndexConfig, IndexStats, NCentroids,
};
pub use kernel::{build_upsilon, score_cluster, Upsilon};
pub use metrics::{evaluate, MetricSet, QueryMetrics};
pub use qrels::{load_qrels, Qrels};
pub use reduce::{
    exhaustive_maxsim, oracle_score, reduce_document_level, reduce_document_level_with,
    reduce_token_level, top_k, MergeTree, RankedResults, TokenStrideSet,
};
pub use runfile::{format_run, load_run, write_run, Run};
pub use select::{compute_tprime, plan, select_probes, ProbePlan, SearchParams, TPrime};
pub use stride::{MissingEstimates, Stride};
