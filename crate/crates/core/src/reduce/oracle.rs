use std::collections::BTreeMap;

use super::RankedResults;
use crate::corpus::{EmbeddingCollection, QueryEmbeddings};
use crate::index::{decompress_explicit, CompressedIndex};
use crate::select::ProbePlan;

/// Reference scorer for tests: materializes the candidate-by-token score matrix.
///
/// Every token in a probed cluster is reconstructed explicitly and scored with
/// a plain dot product. A matrix entry holds the best such score of the
/// document for that query token, or the token's missing-similarity estimate
/// when none of its tokens were retrieved. Row sums give document scores; all
/// candidates are returned in ranking order.
pub fn oracle_score(
    index: &CompressedIndex,
    q: &QueryEmbeddings,
    plan: &ProbePlan,
) -> RankedResults {
    let n_tokens = q.n_tokens();
    let mut matrix: BTreeMap<u32, Vec<Option<f32>>> = BTreeMap::new();
    for (i, probes) in plan.probes.iter().enumerate() {
        let qi = q.token(i);
        for &c in &probes.ids {
            let c = c as usize;
            let (_, doc_ids) = index.cluster(c);
            for (pos, &doc) in doc_ids.iter().enumerate() {
                let v = decompress_explicit(index, c, pos).expect("position within cluster");
                let mut s = 0.0f32;
                for (a, b) in v.iter().zip(qi) {
                    s += a * b;
                }
                let row = matrix.entry(doc).or_insert_with(|| vec![None; n_tokens]);
                row[i] = Some(row[i].map_or(s, |old: f32| old.max(s)));
            }
        }
    }
    let m = plan.missing.values();
    let entries = matrix
        .into_iter()
        .map(|(doc, row)| {
            let total: f64 = row
                .iter()
                .zip(m)
                .map(|(entry, &mi)| entry.unwrap_or(mi) as f64)
                .sum();
            (doc, total as f32)
        })
        .collect();
    RankedResults::from_unsorted(entries)
}

/// Exact late-interaction scores of every document over uncompressed vectors.
///
/// Each query token contributes its best dot product against the document's
/// tokens; sums run in f64. All documents are returned in ranking order.
pub fn exhaustive_maxsim(collection: &EmbeddingCollection, q: &QueryEmbeddings) -> RankedResults {
    let entries = (0..collection.n_docs())
        .map(|d| {
            let range = collection.doc_range(d);
            let total: f64 = (0..q.n_tokens())
                .map(|i| {
                    let qi = q.token(i);
                    range
                        .clone()
                        .map(|t| {
                            collection
                                .token(t)
                                .iter()
                                .zip(qi)
                                .map(|(a, b)| *a as f64 * *b as f64)
                                .sum::<f64>()
                        })
                        .fold(f64::NEG_INFINITY, f64::max)
                })
                .sum();
            (d as u32, total as f32)
        })
        .collect();
    RankedResults::from_unsorted(entries)
}
