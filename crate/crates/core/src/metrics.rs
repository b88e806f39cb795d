//! Recall@k, Success@5 and nDCG@10 over a run and graded judgments.

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::qrels::Qrels;
use crate::runfile::Run;

pub const SUCCESS_CUTOFF: usize = 5;
pub const NDCG_CUTOFF: usize = 10;

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct QueryMetrics {
    pub recall: BTreeMap<usize, f64>,
    pub success_at_5: f64,
    pub ndcg_at_10: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct MetricSet {
    pub per_query: BTreeMap<String, QueryMetrics>,
    /// Macro average over `per_query`.
    pub mean: QueryMetrics,
}

impl MetricSet {
    pub fn n_queries(&self) -> usize {
        self.per_query.len()
    }

    /// Plain-text table, one metric per line.
    pub fn to_table(&self) -> String {
        let mut out = format!("queries\t{}\n", self.n_queries());
        for (k, v) in &self.mean.recall {
            out.push_str(&format!("recall@{k}\t{v:.4}\n"));
        }
        out.push_str(&format!("success@5\t{:.4}\n", self.mean.success_at_5));
        out.push_str(&format!("ndcg@10\t{:.4}\n", self.mean.ndcg_at_10));
        out
    }
}

fn discount(rank: usize) -> f64 {
    1.0 / ((rank + 2) as f64).log2()
}

fn score_query(ranked: &[&str], judged: &BTreeMap<String, u32>, cutoffs: &[usize]) -> QueryMetrics {
    let relevant: BTreeSet<&str> = judged
        .iter()
        .filter(|(_, &g)| g > 0)
        .map(|(d, _)| d.as_str())
        .collect();
    let hits_within = |k: usize| {
        ranked
            .iter()
            .take(k)
            .filter(|d| relevant.contains(*d))
            .count()
    };

    let recall = cutoffs
        .iter()
        .map(|&k| (k, hits_within(k) as f64 / relevant.len() as f64))
        .collect();
    let success_at_5 = if hits_within(SUCCESS_CUTOFF) > 0 {
        1.0
    } else {
        0.0
    };

    let dcg: f64 = ranked
        .iter()
        .take(NDCG_CUTOFF)
        .enumerate()
        .map(|(r, d)| judged.get(*d).copied().unwrap_or(0) as f64 * discount(r))
        .sum();
    let mut ideal: Vec<u32> = judged.values().copied().filter(|&g| g > 0).collect();
    ideal.sort_unstable_by(|a, b| b.cmp(a));
    let idcg: f64 = ideal
        .iter()
        .take(NDCG_CUTOFF)
        .enumerate()
        .map(|(r, &g)| g as f64 * discount(r))
        .sum();

    QueryMetrics {
        recall,
        success_at_5,
        ndcg_at_10: dcg / idcg,
    }
}

/// Scores every run query that has at least one relevant judgment.
///
/// Duplicate document ids within one ranking count once, at their best rank.
pub fn evaluate(run: &Run, qrels: &Qrels, cutoffs: &[usize]) -> Result<MetricSet> {
    let mut per_query = BTreeMap::new();
    for (qid, docs) in &run.queries {
        let Some(judged) = qrels.query(qid) else {
            continue;
        };
        if !judged.values().any(|&g| g > 0) {
            continue;
        }
        let mut seen = BTreeSet::new();
        let ranked: Vec<&str> = docs
            .iter()
            .map(|(d, _)| d.as_str())
            .filter(|d| seen.insert(*d))
            .collect();
        per_query.insert(qid.clone(), score_query(&ranked, judged, cutoffs));
    }
    if per_query.is_empty() {
        return Err(Error::NoJudgedQueries);
    }

    let n = per_query.len() as f64;
    let mut mean = QueryMetrics::default();
    for m in per_query.values() {
        for (&k, &v) in &m.recall {
            *mean.recall.entry(k).or_insert(0.0) += v;
        }
        mean.success_at_5 += m.success_at_5;
        mean.ndcg_at_10 += m.ndcg_at_10;
    }
    for v in mean.recall.values_mut() {
        *v /= n;
    }
    mean.success_at_5 /= n;
    mean.ndcg_at_10 /= n;
    Ok(MetricSet { per_query, mean })
}
