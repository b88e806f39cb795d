//! Two-stage reduction of per-cluster strides into document scores.
//!
//! Token level: the strides of one query token are merged with `max`.
//! Document level: adjacent token intervals are merged with `+`; when a
//! document is absent from one side, that side contributes the sum of its
//! tokens' missing-similarity estimates, taken from prefix sums. Sums are
//! carried as [`FixedScore`] so the result does not depend on the merge order.

mod oracle;

use std::cmp::{Ordering, Reverse};
use std::collections::BinaryHeap;

use rayon::prelude::*;

pub use oracle::{exhaustive_maxsim, oracle_score};

use crate::error::{Error, Result};
use crate::stride::{FixedScore, MissingEstimates, Stride};

/// Merges two strides, keeping the larger value for shared keys.
pub fn merge_max(a: &Stride, b: &Stride, out: &mut Stride) {
    out.clear();
    let (ak, av, bk, bv) = (a.keys(), a.values(), b.keys(), b.values());
    let (mut i, mut j) = (0, 0);
    while i < ak.len() && j < bk.len() {
        match ak[i].cmp(&bk[j]) {
            Ordering::Less => {
                out.push(ak[i], av[i]);
                i += 1;
            }
            Ordering::Greater => {
                out.push(bk[j], bv[j]);
                j += 1;
            }
            Ordering::Equal => {
                out.push(ak[i], if bv[j] > av[i] { bv[j] } else { av[i] });
                i += 1;
                j += 1;
            }
        }
    }
    for t in i..ak.len() {
        out.push(ak[t], av[t]);
    }
    for t in j..bk.len() {
        out.push(bk[t], bv[t]);
    }
}

/// Max-merges the strides of one query token over a balanced tree.
pub fn reduce_token_level(strides: Vec<Stride>) -> Stride {
    let mut level = strides;
    if level.is_empty() {
        return Stride::new();
    }
    while level.len() > 1 {
        let mut next = Vec::with_capacity(level.len().div_ceil(2));
        let mut it = level.into_iter();
        while let Some(a) = it.next() {
            match it.next() {
                Some(b) => {
                    let mut out = Stride::with_capacity(a.len() + b.len());
                    merge_max(&a, &b, &mut out);
                    next.push(out);
                }
                None => next.push(a),
            }
        }
        level = next;
    }
    level.pop().unwrap()
}

/// One token-level stride per query token, in token order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TokenStrideSet {
    pub strides: Vec<Stride>,
}

impl TokenStrideSet {
    pub fn new(strides: Vec<Stride>) -> Self {
        Self { strides }
    }

    pub fn n_tokens(&self) -> usize {
        self.strides.len()
    }
}

/// A stride covering query tokens `lo..=hi` during document-level merging.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CoveredStride {
    lo: usize,
    hi: usize,
    keys: Vec<u32>,
    values: Vec<FixedScore>,
}

impl CoveredStride {
    pub fn from_token(token: usize, stride: &Stride) -> Self {
        let mut s = Self::default();
        s.reset_from_token(token, stride);
        s
    }

    fn reset_from_token(&mut self, token: usize, stride: &Stride) {
        self.lo = token;
        self.hi = token;
        self.keys.clear();
        self.keys.extend_from_slice(stride.keys());
        self.values.clear();
        self.values
            .extend(stride.values().iter().map(|&v| FixedScore::from_f32(v)));
    }

    /// Covered token interval, inclusive.
    pub fn coverage(&self) -> (usize, usize) {
        (self.lo, self.hi)
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    /// Merges `left` (tokens `i..=k`) with `right` (tokens `k+1..=j`) into `out`.
    pub fn merge_into(
        left: &CoveredStride,
        right: &CoveredStride,
        missing: &MissingEstimates,
        out: &mut CoveredStride,
    ) -> Result<()> {
        if left.hi + 1 != right.lo || right.hi >= missing.len() {
            return Err(Error::InconsistentCoverage {
                left_lo: left.lo,
                left_hi: left.hi,
                right_lo: right.lo,
                right_hi: right.hi,
            });
        }
        let left_missing = missing.interval_fixed(left.lo, left.hi);
        let right_missing = missing.interval_fixed(right.lo, right.hi);
        out.lo = left.lo;
        out.hi = right.hi;
        out.keys.clear();
        out.values.clear();
        let (lk, lv, rk, rv) = (&left.keys, &left.values, &right.keys, &right.values);
        let (mut i, mut j) = (0, 0);
        while i < lk.len() && j < rk.len() {
            match lk[i].cmp(&rk[j]) {
                Ordering::Less => {
                    out.keys.push(lk[i]);
                    out.values.push(lv[i] + right_missing);
                    i += 1;
                }
                Ordering::Greater => {
                    out.keys.push(rk[j]);
                    out.values.push(left_missing + rv[j]);
                    j += 1;
                }
                Ordering::Equal => {
                    out.keys.push(lk[i]);
                    out.values.push(lv[i] + rv[j]);
                    i += 1;
                    j += 1;
                }
            }
        }
        for t in i..lk.len() {
            out.keys.push(lk[t]);
            out.values.push(lv[t] + right_missing);
        }
        for t in j..rk.len() {
            out.keys.push(rk[t]);
            out.values.push(left_missing + rv[t]);
        }
        Ok(())
    }

    pub fn merge(
        &self,
        right: &CoveredStride,
        missing: &MissingEstimates,
    ) -> Result<CoveredStride> {
        let mut out = CoveredStride::default();
        Self::merge_into(self, right, missing, &mut out)?;
        Ok(out)
    }

    /// Rounds the accumulated scores back to a plain stride.
    pub fn to_stride(&self) -> Stride {
        Stride::from_parts_unchecked(
            self.keys.clone(),
            self.values.iter().map(|v| v.to_f32()).collect(),
        )
    }
}

fn check_token_count(set: &TokenStrideSet, missing: &MissingEstimates) -> Result<()> {
    if set.n_tokens() == 0 || set.n_tokens() != missing.len() {
        return Err(Error::InvalidParams(format!(
            "{} token strides for {} missing-similarity estimates",
            set.n_tokens(),
            missing.len()
        )));
    }
    Ok(())
}

/// Sums token strides into document scores over a balanced merge tree.
///
/// Each tree level reads from one scratch buffer and writes to the other; the
/// buffers swap roles between levels and their allocations are reused.
pub fn reduce_document_level(set: &TokenStrideSet, missing: &MissingEstimates) -> Result<Stride> {
    check_token_count(set, missing)?;
    let n = set.n_tokens();
    let mut front: Vec<CoveredStride> = set
        .strides
        .iter()
        .enumerate()
        .map(|(t, s)| CoveredStride::from_token(t, s))
        .collect();
    let mut back: Vec<CoveredStride> = vec![CoveredStride::default(); n.div_ceil(2)];
    let mut live = n;
    while live > 1 {
        let pairs = live / 2;
        back[..pairs]
            .par_iter_mut()
            .enumerate()
            .try_for_each(|(p, out)| {
                CoveredStride::merge_into(&front[2 * p], &front[2 * p + 1], missing, out)
            })?;
        if live % 2 == 1 {
            std::mem::swap(&mut back[pairs], &mut front[live - 1]);
        }
        std::mem::swap(&mut front, &mut back);
        live = live.div_ceil(2);
    }
    Ok(front[0].to_stride())
}

/// Shape of the document-level merge tree.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MergeTree {
    /// `((S1 + S2) + S3) + ...`
    LeftLeaning,
    /// `S1 + (S2 + (S3 + ...))`
    RightLeaning,
    /// Split each interval at its midpoint.
    Balanced,
}

fn reduce_interval(
    set: &TokenStrideSet,
    missing: &MissingEstimates,
    lo: usize,
    hi: usize,
    tree: MergeTree,
) -> Result<CoveredStride> {
    if lo == hi {
        return Ok(CoveredStride::from_token(lo, &set.strides[lo]));
    }
    let split = match tree {
        MergeTree::LeftLeaning => hi - 1,
        MergeTree::RightLeaning => lo,
        MergeTree::Balanced => lo + (hi - lo) / 2,
    };
    let left = reduce_interval(set, missing, lo, split, tree)?;
    let right = reduce_interval(set, missing, split + 1, hi, tree)?;
    left.merge(&right, missing)
}

/// Document-level reduction along an explicit merge-tree shape.
pub fn reduce_document_level_with(
    set: &TokenStrideSet,
    missing: &MissingEstimates,
    tree: MergeTree,
) -> Result<Stride> {
    check_token_count(set, missing)?;
    Ok(reduce_interval(set, missing, 0, set.n_tokens() - 1, tree)?.to_stride())
}

/// `(doc id, score)` pairs ordered by descending score, ties by ascending doc id.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RankedResults {
    entries: Vec<(u32, f32)>,
}

/// Ordering where "greater" means "ranks earlier".
#[inline]
fn rank_cmp(a: (u32, f32), b: (u32, f32)) -> Ordering {
    a.1.total_cmp(&b.1).then(b.0.cmp(&a.0))
}

#[derive(Debug, Clone, Copy)]
struct Ranked(u32, f32);

impl PartialEq for Ranked {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Ranked {}

impl PartialOrd for Ranked {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Ranked {
    fn cmp(&self, other: &Self) -> Ordering {
        rank_cmp((self.0, self.1), (other.0, other.1))
    }
}

impl RankedResults {
    /// Sorts arbitrary entries into ranking order; doc ids must be unique.
    pub fn from_unsorted(mut entries: Vec<(u32, f32)>) -> Self {
        entries.sort_by(|&a, &b| rank_cmp(b, a));
        Self { entries }
    }

    pub fn entries(&self) -> &[(u32, f32)] {
        &self.entries
    }

    pub fn doc_ids(&self) -> Vec<u32> {
        self.entries.iter().map(|e| e.0).collect()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn truncated(mut self, k: usize) -> Self {
        self.entries.truncate(k);
        self
    }
}

/// Selects the `k` best entries of `stride` with a bounded min-heap.
pub fn top_k(stride: &Stride, k: usize) -> RankedResults {
    assert!(k >= 1, "k must be at least 1");
    let mut heap: BinaryHeap<Reverse<Ranked>> = BinaryHeap::with_capacity(k + 1);
    for (doc, score) in stride.iter() {
        let cand = Ranked(doc, score);
        if heap.len() < k {
            heap.push(Reverse(cand));
        } else if cand > heap.peek().unwrap().0 {
            heap.pop();
            heap.push(Reverse(cand));
        }
    }
    // ascending in Reverse order is descending rank
    let entries = heap
        .into_sorted_vec()
        .into_iter()
        .map(|Reverse(Ranked(d, s))| (d, s))
        .collect();
    RankedResults { entries }
}
