//! End-to-end query execution: candidate generation, implicit decompression
//! and scoring, two-stage reduction, top-k.

use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::Serialize;

use crate::corpus::QueryEmbeddings;
use crate::error::{Error, Result};
use crate::index::CompressedIndex;
use crate::kernel::{build_upsilon, score_packed, Upsilon};
use crate::reduce::{
    reduce_document_level, reduce_token_level, top_k, RankedResults, TokenStrideSet,
};
use crate::select::{plan, ProbePlan, SearchParams};
use crate::stride::Stride;

/// Wall-clock time spent in each retrieval stage.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct StageTimings {
    pub candidate_generation: Duration,
    pub decompression_scoring: Duration,
    pub reduction: Duration,
}

impl StageTimings {
    pub fn total(&self) -> Duration {
        self.candidate_generation + self.decompression_scoring + self.reduction
    }

    fn accumulate(&mut self, other: &StageTimings) {
        self.candidate_generation += other.candidate_generation;
        self.decompression_scoring += other.decompression_scoring;
        self.reduction += other.reduction;
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct SearchCounters {
    /// Query-token by centroid inner products.
    pub centroid_scores: u64,
    /// Compressed tokens passed through the selective sum.
    pub tokens_scored: u64,
    /// Sum of the sizes of all probed clusters.
    pub probed_cluster_tokens: u64,
}

impl SearchCounters {
    fn accumulate(&mut self, other: &SearchCounters) {
        self.centroid_scores += other.centroid_scores;
        self.tokens_scored += other.tokens_scored;
        self.probed_cluster_tokens += other.probed_cluster_tokens;
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QueryReport {
    pub results: RankedResults,
    pub timings: StageTimings,
    pub counters: SearchCounters,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SearchReport {
    pub queries: Vec<QueryReport>,
    pub timings: StageTimings,
    pub counters: SearchCounters,
}

impl SearchReport {
    fn push(&mut self, q: QueryReport) {
        self.timings.accumulate(&q.timings);
        self.counters.accumulate(&q.counters);
        self.queries.push(q);
    }
}

/// Runs queries against one index with a dedicated worker pool.
pub struct Searcher<'a> {
    index: &'a CompressedIndex,
    params: SearchParams,
    pool: rayon::ThreadPool,
}

fn score_probe(
    index: &CompressedIndex,
    upsilon: &Upsilon,
    token: usize,
    cluster: u32,
    centroid_score: f32,
) -> Stride {
    let (codes, doc_ids) = index.cluster(cluster as usize);
    let mut keys = Vec::with_capacity(doc_ids.len());
    let mut values = Vec::with_capacity(doc_ids.len());
    score_packed(
        codes,
        doc_ids,
        index.bits(),
        centroid_score,
        upsilon.token_table(token),
        &mut keys,
        &mut values,
    );
    Stride::from_parts_unchecked(keys, values)
}

impl<'a> Searcher<'a> {
    pub fn new(index: &'a CompressedIndex, params: SearchParams) -> Result<Self> {
        params.validate(index.n_centroids())?;
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(params.threads)
            .build()
            .map_err(|e| Error::InvalidParams(format!("cannot start worker pool: {e}")))?;
        Ok(Self {
            index,
            params,
            pool,
        })
    }

    pub fn params(&self) -> &SearchParams {
        &self.params
    }

    /// Candidate generation only.
    pub fn plan(&self, q: &QueryEmbeddings) -> Result<ProbePlan> {
        self.pool.install(|| plan(q, self.index, &self.params))
    }

    pub fn search(&self, q: &QueryEmbeddings) -> Result<QueryReport> {
        self.pool.install(|| self.search_in_pool(q))
    }

    fn search_in_pool(&self, q: &QueryEmbeddings) -> Result<QueryReport> {
        let index = self.index;
        let mut timings = StageTimings::default();

        let t0 = Instant::now();
        let plan = plan(q, index, &self.params)?;
        timings.candidate_generation = t0.elapsed();

        let probed_cluster_tokens: u64 = plan
            .probes
            .iter()
            .flat_map(|p| p.ids.iter())
            .map(|&c| index.cluster_sizes()[c as usize] as u64)
            .sum();

        let t1 = Instant::now();
        let upsilon = build_upsilon(q, index.buckets());
        let score_token = |i: usize| -> Vec<Stride> {
            let p = &plan.probes[i];
            p.ids
                .iter()
                .zip(&p.scores)
                .map(|(&c, &s)| score_probe(index, &upsilon, i, c, s))
                .collect()
        };
        let token_strides: Vec<Stride> = if self.params.threads > 1 {
            // scoring and token-level reduction fused per query token
            let fused = (0..q.n_tokens())
                .into_par_iter()
                .map(|i| reduce_token_level(score_token(i)))
                .collect();
            timings.decompression_scoring = t1.elapsed();
            fused
        } else {
            let per_token: Vec<Vec<Stride>> = (0..q.n_tokens()).map(score_token).collect();
            timings.decompression_scoring = t1.elapsed();
            let t2 = Instant::now();
            let reduced = per_token.into_iter().map(reduce_token_level).collect();
            timings.reduction = t2.elapsed();
            reduced
        };

        let t3 = Instant::now();
        let set = TokenStrideSet::new(token_strides);
        let documents = reduce_document_level(&set, &plan.missing)?;
        let results = top_k(&documents, self.params.k);
        timings.reduction += t3.elapsed();

        Ok(QueryReport {
            results,
            timings,
            counters: SearchCounters {
                centroid_scores: plan.centroid_score_evaluations() as u64,
                tokens_scored: probed_cluster_tokens,
                probed_cluster_tokens,
            },
        })
    }

    pub fn search_batch(&self, queries: &[QueryEmbeddings]) -> Result<SearchReport> {
        let mut report = SearchReport::default();
        for q in queries {
            report.push(self.search(q)?);
        }
        Ok(report)
    }
}

/// Searches a single query.
pub fn search(
    index: &CompressedIndex,
    q: &QueryEmbeddings,
    params: &SearchParams,
) -> Result<QueryReport> {
    Searcher::new(index, params.clone())?.search(q)
}

/// Searches every query in order.
pub fn search_batch(
    index: &CompressedIndex,
    queries: &[QueryEmbeddings],
    params: &SearchParams,
) -> Result<SearchReport> {
    Searcher::new(index, params.clone())?.search_batch(queries)
}
