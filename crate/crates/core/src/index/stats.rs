use serde::Serialize;

use super::CompressedIndex;

/// Clusters whose size falls in `[lo, hi]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct HistogramBin {
    pub lo: u64,
    pub hi: u64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IndexStats {
    pub n_centroids: usize,
    pub n_docs: usize,
    pub n_tokens: usize,
    pub bits: u8,
    pub residual_bytes_per_token: usize,
    pub residual_bytes: usize,
    /// Residuals, centroids, bucket table, offsets and document ids.
    pub total_bytes: usize,
    pub empty_clusters: usize,
    pub min_cluster_size: u32,
    pub max_cluster_size: u32,
    pub mean_cluster_size: f64,
    /// Bins are 0, 1, 2..3, 4..7 and so on up to the largest cluster.
    pub cluster_size_histogram: Vec<HistogramBin>,
}

fn log2_bin(size: u32) -> usize {
    if size == 0 {
        0
    } else {
        32 - size.leading_zeros() as usize
    }
}

impl IndexStats {
    pub fn of(index: &CompressedIndex) -> Self {
        let sizes = index.cluster_sizes();
        let n_bins = sizes.iter().map(|&s| log2_bin(s)).max().unwrap_or(0) + 1;
        let mut histogram: Vec<HistogramBin> = (0..n_bins)
            .map(|b| match b {
                0 => HistogramBin {
                    lo: 0,
                    hi: 0,
                    count: 0,
                },
                b => HistogramBin {
                    lo: 1 << (b - 1),
                    hi: (1 << b) - 1,
                    count: 0,
                },
            })
            .collect();
        for &s in sizes {
            histogram[log2_bin(s)].count += 1;
        }

        let total_bytes = index.residual_bytes()
            + std::mem::size_of_val(index.centroids().as_slice())
            + 4 * (index.buckets().boundaries().len() + index.buckets().representatives().len())
            + std::mem::size_of_val(index.cluster_offsets())
            + std::mem::size_of_val(index.doc_ids());

        Self {
            n_centroids: index.n_centroids(),
            n_docs: index.n_docs(),
            n_tokens: index.n_tokens(),
            bits: index.bits(),
            residual_bytes_per_token: index.bytes_per_token(),
            residual_bytes: index.residual_bytes(),
            total_bytes,
            empty_clusters: sizes.iter().filter(|&&s| s == 0).count(),
            min_cluster_size: sizes.iter().copied().min().unwrap_or(0),
            max_cluster_size: sizes.iter().copied().max().unwrap_or(0),
            mean_cluster_size: index.n_tokens() as f64 / index.n_centroids().max(1) as f64,
            cluster_size_histogram: histogram,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::synth_corpus;
    use crate::index::{build_index, IndexConfig, NCentroids};

    #[test]
    fn histogram_covers_every_cluster() {
        let c = synth_corpus(3, 120, (2, 9), 6);
        let idx = build_index(
            &c,
            &IndexConfig {
                n_centroids: NCentroids::Fixed(32),
                ..Default::default()
            },
        )
        .unwrap();
        let s = IndexStats::of(&idx);
        assert_eq!(s.residual_bytes_per_token, 64);
        assert_eq!(s.residual_bytes, 64 * c.n_tokens());
        let counted: usize = s.cluster_size_histogram.iter().map(|b| b.count).sum();
        assert_eq!(counted, 32);
        for &size in idx.cluster_sizes() {
            let b = &s.cluster_size_histogram[log2_bin(size)];
            assert!(b.lo <= size as u64 && size as u64 <= b.hi);
        }
    }

    #[test]
    fn bins_are_powers_of_two() {
        assert_eq!(log2_bin(0), 0);
        assert_eq!(log2_bin(1), 1);
        assert_eq!(log2_bin(3), 2);
        assert_eq!(log2_bin(4), 3);
    }
}
