//! Implicit decompression.
//!
//! A candidate's score against query token `i` is the stored centroid score
//! plus `sum_d table[i][d][code_d]`, where `table[i][d][w] = q[i][d] * weight[w]`
//! is precomputed once per query. Scoring a cluster is therefore lookups and
//! additions only, with no reconstructed vectors.

use std::ops::Add;

use crate::corpus::{QueryEmbeddings, DIM};
use crate::error::{Error, Result};
use crate::index::{BucketWeights, CompressedIndex};
use crate::stride::Stride;

/// Scalar type the selective-sum kernel runs on.
///
/// The kernel only needs addition and comparison; leaving multiplication out
/// of the bound means it cannot multiply per candidate.
pub trait KernelScalar: Copy + Add<Output = Self> + PartialOrd {}

impl KernelScalar for f32 {}

/// Per-query lookup table, laid out `[token][dim][bucket]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Upsilon<T = f32> {
    n_tokens: usize,
    n_buckets: usize,
    table: Vec<T>,
}

impl<T: Copy> Upsilon<T> {
    pub fn n_tokens(&self) -> usize {
        self.n_tokens
    }

    pub fn n_buckets(&self) -> usize {
        self.n_buckets
    }

    /// The `128 x 2^b` slice for query token `token`.
    pub fn token_table(&self, token: usize) -> &[T] {
        let w = DIM * self.n_buckets;
        &self.table[token * w..(token + 1) * w]
    }

    pub fn get(&self, token: usize, dim: usize, bucket: usize) -> T {
        self.table[(token * DIM + dim) * self.n_buckets + bucket]
    }

    /// Converts every entry, e.g. into an instrumented scalar.
    pub fn map<U: Copy>(&self, f: impl FnMut(T) -> U) -> Upsilon<U> {
        Upsilon {
            n_tokens: self.n_tokens,
            n_buckets: self.n_buckets,
            table: self.table.iter().copied().map(f).collect(),
        }
    }
}

/// Builds the lookup table with exactly `n_tokens * 128 * 2^b` multiplications.
pub fn build_upsilon(q: &QueryEmbeddings, weights: &BucketWeights) -> Upsilon {
    let reps = weights.representatives();
    let mut table = Vec::with_capacity(q.n_tokens() * DIM * reps.len());
    for &x in q.vectors() {
        table.extend(reps.iter().map(|&w| x * w));
    }
    Upsilon {
        n_tokens: q.n_tokens(),
        n_buckets: reps.len(),
        table,
    }
}

/// Scores every packed token of one cluster and max-reduces equal doc ids.
///
/// `doc_ids` must be sorted ascending; output keys are then strictly
/// ascending. Each candidate costs one addition per dimension plus one for the
/// centroid score.
pub fn score_packed<T: KernelScalar>(
    codes: &[u8],
    doc_ids: &[u32],
    bits: u8,
    centroid_score: T,
    table: &[T],
    out_keys: &mut Vec<u32>,
    out_values: &mut Vec<T>,
) {
    let bpt = DIM * bits as usize / 8;
    debug_assert_eq!(codes.len(), doc_ids.len() * bpt);
    debug_assert_eq!(table.len(), DIM << bits);
    for (token_codes, &doc) in codes.chunks_exact(bpt).zip(doc_ids) {
        let residual = match bits {
            4 => residual_sum_4(token_codes, table),
            _ => residual_sum_2(token_codes, table),
        };
        let score = centroid_score + residual;
        match out_keys.last() {
            Some(&last) if last == doc => {
                let slot = out_values.last_mut().unwrap();
                if score > *slot {
                    *slot = score;
                }
            }
            _ => {
                out_keys.push(doc);
                out_values.push(score);
            }
        }
    }
}

#[inline(always)]
fn residual_sum_4<T: KernelScalar>(codes: &[u8], table: &[T]) -> T {
    // dimension 2j uses the low nibble of byte j, dimension 2j+1 the high one
    let first = codes[0];
    let mut acc = table[(first & 0x0F) as usize] + table[16 + (first >> 4) as usize];
    for (j, &byte) in codes.iter().enumerate().skip(1) {
        let base = j * 32;
        acc = acc + table[base + (byte & 0x0F) as usize];
        acc = acc + table[base + 16 + (byte >> 4) as usize];
    }
    acc
}

#[inline(always)]
fn residual_sum_2<T: KernelScalar>(codes: &[u8], table: &[T]) -> T {
    let first = codes[0];
    let mut acc = table[(first & 0b11) as usize];
    acc = acc + table[4 + ((first >> 2) & 0b11) as usize];
    acc = acc + table[8 + ((first >> 4) & 0b11) as usize];
    acc = acc + table[12 + (first >> 6) as usize];
    for (j, &byte) in codes.iter().enumerate().skip(1) {
        let base = j * 16;
        acc = acc + table[base + (byte & 0b11) as usize];
        acc = acc + table[base + 4 + ((byte >> 2) & 0b11) as usize];
        acc = acc + table[base + 8 + ((byte >> 4) & 0b11) as usize];
        acc = acc + table[base + 12 + (byte >> 6) as usize];
    }
    acc
}

/// Generic form of [`score_cluster`] returning raw keys and values.
pub fn score_cluster_with<T: KernelScalar>(
    index: &CompressedIndex,
    cluster_id: usize,
    token_id: usize,
    centroid_score: T,
    upsilon: &Upsilon<T>,
) -> Result<(Vec<u32>, Vec<T>)> {
    if cluster_id >= index.n_centroids() {
        return Err(Error::OutOfRange(format!(
            "cluster {cluster_id} of {}",
            index.n_centroids()
        )));
    }
    if token_id >= upsilon.n_tokens() {
        return Err(Error::OutOfRange(format!(
            "query token {token_id} of {}",
            upsilon.n_tokens()
        )));
    }
    let (codes, doc_ids) = index.cluster(cluster_id);
    let mut keys = Vec::with_capacity(doc_ids.len());
    let mut values = Vec::with_capacity(doc_ids.len());
    score_packed(
        codes,
        doc_ids,
        index.bits(),
        centroid_score,
        upsilon.token_table(token_id),
        &mut keys,
        &mut values,
    );
    Ok((keys, values))
}

/// Scores cluster `cluster_id` against query token `token_id`.
///
/// `centroid_score` is the probe score of this (token, cluster) pair computed
/// during candidate generation.
pub fn score_cluster(
    index: &CompressedIndex,
    cluster_id: usize,
    token_id: usize,
    centroid_score: f32,
    upsilon: &Upsilon,
) -> Result<Stride> {
    let (keys, values) = score_cluster_with(index, cluster_id, token_id, centroid_score, upsilon)?;
    Ok(Stride::from_parts_unchecked(keys, values))
}

/// Operation-counting scalar for verifying the kernel's arithmetic.
pub mod instrument {
    use std::cell::Cell;
    use std::cmp::Ordering;
    use std::ops::{Add, Mul};

    use super::KernelScalar;

    thread_local! {
        static ADDS: Cell<u64> = const { Cell::new(0) };
        static MULS: Cell<u64> = const { Cell::new(0) };
    }

    /// f32 wrapper that counts additions and multiplications on this thread.
    #[derive(Debug, Clone, Copy)]
    pub struct Counted(pub f32);

    impl Add for Counted {
        type Output = Self;
        fn add(self, rhs: Self) -> Self {
            ADDS.with(|c| c.set(c.get() + 1));
            Counted(self.0 + rhs.0)
        }
    }

    impl Mul for Counted {
        type Output = Self;
        fn mul(self, rhs: Self) -> Self {
            MULS.with(|c| c.set(c.get() + 1));
            Counted(self.0 * rhs.0)
        }
    }

    impl PartialEq for Counted {
        fn eq(&self, other: &Self) -> bool {
            self.0 == other.0
        }
    }

    impl PartialOrd for Counted {
        fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
            self.0.partial_cmp(&other.0)
        }
    }

    impl KernelScalar for Counted {}

    /// Zeroes both counters.
    pub fn reset() {
        ADDS.with(|c| c.set(0));
        MULS.with(|c| c.set(0));
    }

    /// `(additions, multiplications)` since the last reset.
    pub fn counts() -> (u64, u64) {
        (ADDS.with(Cell::get), MULS.with(Cell::get))
    }
}

#[cfg(test)]
mod tests {
    use super::instrument::{self, Counted};
    use super::*;
    use crate::codes::pack_codes;
    use crate::corpus::synth_corpus;
    use crate::index::{build_index, decompress_explicit, IndexConfig, NCentroids};
    use crate::linalg;

    fn unit(d: usize) -> Vec<f32> {
        let mut v = vec![0.0; DIM];
        v[d] = 1.0;
        v
    }

    fn weights(bits: u8) -> BucketWeights {
        let sample: Vec<f32> = (0..2000)
            .map(|i| ((i as f32) * 0.731).sin() * 0.2)
            .collect();
        crate::index::compute_bucket_weights(&sample, bits).unwrap()
    }

    fn random_query(seed: u64, n: usize) -> QueryEmbeddings {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut v: Vec<f32> = (0..n * DIM).map(|_| rng.random_range(-1.0..1.0)).collect();
        for r in v.chunks_exact_mut(DIM) {
            linalg::normalize(r);
        }
        QueryEmbeddings::new(v).unwrap()
    }

    #[test]
    fn zero_weights_give_zero_table() {
        let w = BucketWeights::new(vec![-1.0, 0.0, 1.0], vec![0.0; 4]).unwrap();
        let u = build_upsilon(&random_query(1, 3), &w);
        assert!(u.token_table(2).iter().all(|&x| x == 0.0));
    }

    #[test]
    fn unit_query_row_selects_one_dimension() {
        let w = weights(4);
        let q = QueryEmbeddings::new(unit(1)).unwrap();
        let u = build_upsilon(&q, &w);
        for d in 0..DIM {
            for b in 0..16 {
                let expect = if d == 1 { w.representatives()[b] } else { 0.0 };
                assert_eq!(u.get(0, d, b), expect);
            }
        }
    }

    #[test]
    fn table_matches_scalar_products() {
        let w = weights(4);
        let q = random_query(7, 5);
        let u = build_upsilon(&q, &w);
        assert_eq!(u.token_table(0).len(), DIM * 16);
        for i in 0..5 {
            for d in 0..DIM {
                for b in 0..16 {
                    assert_eq!(u.get(i, d, b), q.token(i)[d] * w.representatives()[b]);
                }
            }
        }
    }

    #[test]
    fn hand_max_reduction() {
        // three tokens: docs 5, 5, 9 with residual sums 0.2, 0.7, 0.4 via dimension 0
        let w = BucketWeights::new(vec![0.3, 0.55, 0.8], vec![0.2, 0.4, 0.7, 0.9]).unwrap();
        let q = QueryEmbeddings::new(unit(0)).unwrap();
        let u = build_upsilon(&q, &w);
        let mut codes = Vec::new();
        for code in [0u8, 2, 1] {
            let mut c = [0u8; DIM];
            c[0] = code;
            // other dims hit weight 0.2 but the query is zero there
            codes.extend(pack_codes(&c, 2));
        }
        let (mut keys, mut values) = (Vec::new(), Vec::new());
        score_packed(
            &codes,
            &[5, 5, 9],
            2,
            0.0f32,
            u.token_table(0),
            &mut keys,
            &mut values,
        );
        assert_eq!(keys, vec![5, 9]);
        assert_eq!(values, vec![0.7, 0.4]);
    }

    fn small_index(bits: u8) -> CompressedIndex {
        let c = synth_corpus(11, 120, (4, 8), 8);
        let cfg = IndexConfig {
            b: bits,
            n_centroids: NCentroids::Fixed(8),
            seed: 3,
            ..Default::default()
        };
        build_index(&c, &cfg).unwrap()
    }

    #[test]
    fn zero_weights_give_centroid_scores() {
        let idx = small_index(4);
        let w = BucketWeights::new((1..16).map(|i| i as f32).collect(), vec![0.0; 16]).unwrap();
        let u = build_upsilon(&random_query(2, 1), &w);
        let s = score_cluster(&idx, 3, 0, 0.25, &u).unwrap();
        assert!(s.values().iter().all(|&v| v == 0.25));
        let mut distinct = idx.cluster(3).1.to_vec();
        distinct.dedup();
        assert_eq!(s.keys(), &distinct[..]);
    }

    #[test]
    fn matches_explicit_decompression() {
        for bits in [2, 4] {
            let idx = small_index(bits);
            let q = random_query(bits as u64, 3);
            let u = build_upsilon(&q, idx.buckets());
            for c in 0..idx.n_centroids() {
                let cscore = linalg::dot(q.token(1), idx.centroids().row(c));
                let s = score_cluster(&idx, c, 1, cscore, &u).unwrap();
                let (_, ids) = idx.cluster(c);
                let mut expect = std::collections::BTreeMap::<u32, f32>::new();
                for (pos, &d) in ids.iter().enumerate() {
                    let v = decompress_explicit(&idx, c, pos).unwrap();
                    let score: f32 = v.iter().zip(q.token(1)).map(|(a, b)| a * b).sum();
                    let e = expect.entry(d).or_insert(f32::NEG_INFINITY);
                    *e = e.max(score);
                }
                assert_eq!(s.keys(), expect.keys().copied().collect::<Vec<_>>());
                for (got, want) in s.values().iter().zip(expect.values()) {
                    assert!((got - want).abs() <= 1e-5, "{got} vs {want}");
                }
            }
        }
    }

    #[test]
    fn translation_shifts_scores() {
        let idx = small_index(4);
        let u = build_upsilon(&random_query(9, 2), idx.buckets());
        let a = score_cluster(&idx, 2, 1, 0.125, &u).unwrap();
        let b = score_cluster(&idx, 2, 1, 0.625, &u).unwrap();
        assert_eq!(a.keys(), b.keys());
        for (x, y) in a.values().iter().zip(b.values()) {
            assert!((y - x - 0.5).abs() <= 1e-6);
        }
    }

    #[test]
    fn kernel_performs_no_multiplications() {
        let idx = small_index(4);
        let u = build_upsilon(&random_query(5, 2), idx.buckets()).map(Counted);
        let c = (0..8).max_by_key(|&c| idx.cluster_sizes()[c]).unwrap();
        instrument::reset();
        let (keys, _) = score_cluster_with(&idx, c, 0, Counted(0.5), &u).unwrap();
        let (adds, muls) = instrument::counts();
        assert_eq!(muls, 0);
        assert_eq!(adds, idx.cluster_sizes()[c] as u64 * DIM as u64);
        assert!(!keys.is_empty());
    }

    #[test]
    fn bad_cluster_is_an_error() {
        let idx = small_index(2);
        let u = build_upsilon(&random_query(1, 1), idx.buckets());
        assert!(score_cluster(&idx, 8, 0, 0.0, &u).is_err());
        assert!(score_cluster(&idx, 0, 1, 0.0, &u).is_err());
    }
}
