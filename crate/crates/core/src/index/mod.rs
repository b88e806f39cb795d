//! Construction of the compressed residual index.
//!
//! Tokens are clustered with spherical k-means trained on a sqrt-sized sample
//! of documents. Each token is stored as the id of its nearest centroid plus a
//! residual quantized to `b` bits per dimension against quantile buckets
//! shared by all dimensions. Tokens are grouped cluster-contiguously with
//! document ids ascending inside every cluster.

mod buckets;
mod kmeans;
mod stats;
mod storage;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use buckets::{
    compute_bucket_weights, quantization_mse, uniform_bucket_weights, BucketWeights,
};
pub use kmeans::train_centroids;
pub use stats::{HistogramBin, IndexStats};
pub use storage::{index_dir_bytes, load_index, save_index, IndexMeta, INDEX_VERSION};

use crate::codes::{pack_codes_into, packed_len, unpack_codes};
use crate::corpus::{EmbeddingCollection, DIM, NORM_TOLERANCE};
use crate::error::{Error, Result};
use crate::linalg;

/// Number of centroids to train.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NCentroids {
    Auto,
    Fixed(usize),
}

impl std::str::FromStr for NCentroids {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        if s.eq_ignore_ascii_case("auto") {
            return Ok(NCentroids::Auto);
        }
        s.parse()
            .map(NCentroids::Fixed)
            .map_err(|_| format!("expected `auto` or a positive integer, got {s:?}"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndexConfig {
    /// Bits per residual dimension, 2 or 4.
    pub b: u8,
    pub n_centroids: NCentroids,
    pub kmeans_iters: usize,
    pub seed: u64,
    /// Multiplier for the sqrt-sized document sample and for automatic K.
    pub sample_factor: usize,
}

impl Default for IndexConfig {
    fn default() -> Self {
        Self {
            b: 4,
            n_centroids: NCentroids::Auto,
            kmeans_iters: 20,
            seed: 0,
            sample_factor: 16,
        }
    }
}

impl IndexConfig {
    pub fn validate(&self) -> Result<()> {
        if self.b != 2 && self.b != 4 {
            return Err(Error::InvalidConfig(format!(
                "b must be 2 or 4, got {}",
                self.b
            )));
        }
        if self.n_centroids == NCentroids::Fixed(0) {
            return Err(Error::InvalidConfig(
                "n_centroids must be at least 1".into(),
            ));
        }
        if self.kmeans_iters == 0 {
            return Err(Error::InvalidConfig(
                "kmeans_iters must be at least 1".into(),
            ));
        }
        if self.sample_factor == 0 {
            return Err(Error::InvalidConfig(
                "sample_factor must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

/// Row-major `K x 128` table of unit-norm centroids.
#[derive(Debug, Clone, PartialEq)]
pub struct CentroidTable {
    k: usize,
    data: Vec<f32>,
}

impl CentroidTable {
    pub fn new(k: usize, data: Vec<f32>) -> Result<Self> {
        if k == 0 || data.len() != k * DIM {
            return Err(Error::CorruptedIndex(format!(
                "centroid table holds {} floats, expected {k} x {DIM}",
                data.len()
            )));
        }
        for (c, row) in data.chunks_exact(DIM).enumerate() {
            let norm = linalg::norm(row);
            if !((norm - 1.0).abs() <= NORM_TOLERANCE) {
                return Err(Error::CorruptedIndex(format!(
                    "centroid {c} has norm {norm}"
                )));
            }
        }
        Ok(Self { k, data })
    }

    pub fn len(&self) -> usize {
        self.k
    }

    pub fn is_empty(&self) -> bool {
        self.k == 0
    }

    pub fn row(&self, c: usize) -> &[f32] {
        &self.data[c * DIM..(c + 1) * DIM]
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }
}

/// The searchable index: centroids, bucket weights and cluster-grouped codes.
#[derive(Debug, Clone, PartialEq)]
pub struct CompressedIndex {
    pub(crate) centroids: CentroidTable,
    pub(crate) buckets: BucketWeights,
    pub(crate) cluster_offsets: Vec<u64>,
    pub(crate) cluster_sizes: Vec<u32>,
    pub(crate) codes: Vec<u8>,
    pub(crate) doc_ids: Vec<u32>,
    pub(crate) n_docs: usize,
    pub(crate) b: u8,
    pub(crate) config: IndexConfig,
}

impl CompressedIndex {
    /// Assembles an index from its parts, checking every structural invariant.
    #[allow(clippy::too_many_arguments)]
    pub fn from_parts(
        centroids: CentroidTable,
        buckets: BucketWeights,
        cluster_offsets: Vec<u64>,
        codes: Vec<u8>,
        doc_ids: Vec<u32>,
        n_docs: usize,
        b: u8,
        config: IndexConfig,
    ) -> Result<Self> {
        if b != 2 && b != 4 {
            return Err(Error::InvalidConfig(format!("b must be 2 or 4, got {b}")));
        }
        if buckets.bits() != b {
            return Err(Error::CorruptedIndex(format!(
                "bucket table is for b={}, index declares b={b}",
                buckets.bits()
            )));
        }
        let k = centroids.len();
        if cluster_offsets.len() != k + 1 || cluster_offsets[0] != 0 {
            return Err(Error::CorruptedIndex(format!(
                "expected {} cluster offsets starting at 0",
                k + 1
            )));
        }
        if cluster_offsets.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::CorruptedIndex(
                "cluster offsets are not monotone".into(),
            ));
        }
        let n_tokens = *cluster_offsets.last().unwrap() as usize;
        if doc_ids.len() != n_tokens {
            return Err(Error::CorruptedIndex(format!(
                "{} doc ids for {n_tokens} tokens",
                doc_ids.len()
            )));
        }
        let expected = n_tokens * DIM * b as usize / 8;
        if codes.len() != expected {
            return Err(Error::CodesLengthMismatch {
                expected,
                found: codes.len(),
            });
        }
        let cluster_sizes: Vec<u32> = cluster_offsets
            .windows(2)
            .map(|w| (w[1] - w[0]) as u32)
            .collect();
        for c in 0..k {
            let ids = &doc_ids[cluster_offsets[c] as usize..cluster_offsets[c + 1] as usize];
            if ids.windows(2).any(|w| w[1] < w[0]) {
                return Err(Error::CorruptedIndex(format!(
                    "doc ids of cluster {c} are not sorted"
                )));
            }
        }
        if let Some(&bad) = doc_ids.iter().find(|&&d| d as usize >= n_docs) {
            return Err(Error::CorruptedIndex(format!(
                "doc id {bad} out of range for {n_docs} documents"
            )));
        }
        Ok(Self {
            centroids,
            buckets,
            cluster_offsets,
            cluster_sizes,
            codes,
            doc_ids,
            n_docs,
            b,
            config,
        })
    }

    pub fn centroids(&self) -> &CentroidTable {
        &self.centroids
    }

    pub fn buckets(&self) -> &BucketWeights {
        &self.buckets
    }

    pub fn n_centroids(&self) -> usize {
        self.centroids.len()
    }

    pub fn n_docs(&self) -> usize {
        self.n_docs
    }

    pub fn n_tokens(&self) -> usize {
        self.doc_ids.len()
    }

    pub fn bits(&self) -> u8 {
        self.b
    }

    pub fn config(&self) -> &IndexConfig {
        &self.config
    }

    /// Packed bytes per token: `128 * b / 8`.
    pub fn bytes_per_token(&self) -> usize {
        DIM * self.b as usize / 8
    }

    pub fn cluster_offsets(&self) -> &[u64] {
        &self.cluster_offsets
    }

    pub fn cluster_sizes(&self) -> &[u32] {
        &self.cluster_sizes
    }

    pub fn codes(&self) -> &[u8] {
        &self.codes
    }

    pub fn doc_ids(&self) -> &[u32] {
        &self.doc_ids
    }

    /// Token range of cluster `c` in the flat code and doc-id arrays.
    pub fn cluster_range(&self, c: usize) -> std::ops::Range<usize> {
        self.cluster_offsets[c] as usize..self.cluster_offsets[c + 1] as usize
    }

    /// Packed codes and doc ids of cluster `c`.
    pub fn cluster(&self, c: usize) -> (&[u8], &[u32]) {
        let r = self.cluster_range(c);
        let bpt = self.bytes_per_token();
        (&self.codes[r.start * bpt..r.end * bpt], &self.doc_ids[r])
    }

    /// Bytes of packed residual payload.
    pub fn residual_bytes(&self) -> usize {
        self.codes.len()
    }
}

/// Documents to sample for training: `ceil(sqrt(n_docs) * factor)`, at most `n_docs`.
pub fn training_sample_size(n_docs: usize, factor: usize) -> usize {
    (((n_docs as f64).sqrt() * factor as f64).ceil() as usize).min(n_docs)
}

/// Token vectors of a uniform sample of documents (without replacement).
pub fn sample_training_set(collection: &EmbeddingCollection, seed: u64, factor: usize) -> Vec<f32> {
    let n_docs = collection.n_docs();
    let take = training_sample_size(n_docs, factor);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut docs = sample(&mut rng, n_docs, take).into_vec();
    docs.sort_unstable();
    let mut out = Vec::new();
    for d in docs {
        out.extend_from_slice(collection.doc(d));
    }
    out
}

/// `2^round(log2(factor * sqrt(n_tokens)))`, clamped to `[1, n_tokens]`.
pub fn auto_n_centroids(n_tokens: usize, factor: usize) -> usize {
    let target = factor as f64 * (n_tokens as f64).sqrt();
    let k = 2f64.powi(target.log2().round() as i32) as usize;
    k.clamp(1, n_tokens.max(1))
}

/// Residuals `d - C[nearest(d)]` of all sample rows, pooled over dimensions.
pub fn sample_residuals(sample: &[f32], centroids: &CentroidTable) -> Vec<f32> {
    let assignment = kmeans::assign(sample, centroids.as_slice());
    let mut out = Vec::with_capacity(sample.len());
    for (p, &(c, _)) in sample.chunks_exact(DIM).zip(&assignment) {
        let centroid = centroids.row(c as usize);
        out.extend(p.iter().zip(centroid).map(|(x, y)| x - y));
    }
    out
}

/// Assigns every token to its nearest centroid and stores its quantized residual.
pub fn assign_and_compress(
    collection: &EmbeddingCollection,
    centroids: &CentroidTable,
    weights: &BucketWeights,
    b: u8,
    config: IndexConfig,
) -> Result<CompressedIndex> {
    if weights.bits() != b {
        return Err(Error::InvalidConfig(format!(
            "bucket weights are for b={}, requested b={b}",
            weights.bits()
        )));
    }
    let k = centroids.len();
    let bpt = packed_len(DIM, b);
    let n_tokens = collection.n_tokens();
    let assignment = kmeans::assign(collection.vectors(), centroids.as_slice());

    let mut packed = vec![0u8; n_tokens * bpt];
    packed
        .par_chunks_mut(bpt)
        .zip(collection.vectors().par_chunks_exact(DIM))
        .zip(assignment.par_iter())
        .for_each(|((out, token), &(c, _))| {
            let centroid = centroids.row(c as usize);
            let mut codes = [0u8; DIM];
            for d in 0..DIM {
                codes[d] = weights.quantize(token[d] - centroid[d]);
            }
            pack_codes_into(&codes, b, out);
        });

    // stable counting sort by cluster; token order already ascends by doc id
    let mut offsets = vec![0u64; k + 1];
    for &(c, _) in &assignment {
        offsets[c as usize + 1] += 1;
    }
    for c in 0..k {
        offsets[c + 1] += offsets[c];
    }
    let token_docs = collection.token_doc_ids();
    let mut cursor: Vec<usize> = offsets[..k].iter().map(|&o| o as usize).collect();
    let mut codes = vec![0u8; n_tokens * bpt];
    let mut doc_ids = vec![0u32; n_tokens];
    for (t, &(c, _)) in assignment.iter().enumerate() {
        let slot = cursor[c as usize];
        cursor[c as usize] += 1;
        codes[slot * bpt..(slot + 1) * bpt].copy_from_slice(&packed[t * bpt..(t + 1) * bpt]);
        doc_ids[slot] = token_docs[t];
    }

    CompressedIndex::from_parts(
        centroids.clone(),
        weights.clone(),
        offsets,
        codes,
        doc_ids,
        collection.n_docs(),
        b,
        config,
    )
}

/// Reconstructs the vector at `position` of cluster `cluster_id`: centroid plus
/// the bucket value selected by each dimension's code.
pub fn decompress_explicit(
    index: &CompressedIndex,
    cluster_id: usize,
    position: usize,
) -> Result<Vec<f32>> {
    if cluster_id >= index.n_centroids() {
        return Err(Error::OutOfRange(format!(
            "cluster {cluster_id} of {}",
            index.n_centroids()
        )));
    }
    let size = index.cluster_sizes[cluster_id] as usize;
    if position >= size {
        return Err(Error::OutOfRange(format!(
            "position {position} in cluster {cluster_id} of size {size}"
        )));
    }
    let (codes, _) = index.cluster(cluster_id);
    let bpt = index.bytes_per_token();
    let unpacked = unpack_codes(&codes[position * bpt..(position + 1) * bpt], index.b, DIM)?;
    let centroid = index.centroids.row(cluster_id);
    Ok(centroid
        .iter()
        .zip(&unpacked)
        .map(|(c, &code)| c + index.buckets.value(code))
        .collect())
}

/// Builds an index: sample, train centroids, fit buckets on sample residuals, compress.
pub fn build_index(
    collection: &EmbeddingCollection,
    config: &IndexConfig,
) -> Result<CompressedIndex> {
    config.validate()?;
    let sample = sample_training_set(collection, config.seed, config.sample_factor);
    let sample_rows = sample.len() / DIM;
    let k = match config.n_centroids {
        NCentroids::Fixed(k) => k,
        NCentroids::Auto => {
            auto_n_centroids(collection.n_tokens(), config.sample_factor).min(sample_rows)
        }
    };
    let centroids = train_centroids(&sample, k, config.kmeans_iters, config.seed)?;
    let residuals = sample_residuals(&sample, &centroids);
    let weights = match compute_bucket_weights(&residuals, config.b) {
        Err(Error::DegenerateSample) if residuals.iter().all(|&r| r == residuals[0]) => {
            BucketWeights::constant_fallback(residuals[0], config.b)?
        }
        other => other?,
    };
    assign_and_compress(collection, &centroids, &weights, config.b, config.clone())
}
