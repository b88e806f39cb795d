use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Bin edges and per-bin reconstruction values for residual quantization.
///
/// `boundaries` has `2^b - 1` entries and `representatives` has `2^b`. A value
/// `v` falls into bin `i` when `boundaries[i-1] <= v < boundaries[i]`; values
/// below the first edge land in bin 0 and values at or above the last edge land
/// in the top bin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BucketWeights {
    boundaries: Vec<f32>,
    representatives: Vec<f32>,
}

impl BucketWeights {
    pub fn new(boundaries: Vec<f32>, representatives: Vec<f32>) -> Result<Self> {
        let n = representatives.len();
        if !(n == 4 || n == 16) || boundaries.len() + 1 != n {
            return Err(Error::CorruptedIndex(format!(
                "bucket tables have {} boundaries and {} representatives",
                boundaries.len(),
                n
            )));
        }
        if boundaries
            .iter()
            .chain(&representatives)
            .any(|x| !x.is_finite())
        {
            return Err(Error::CorruptedIndex("non-finite bucket value".into()));
        }
        if boundaries.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::DegenerateSample);
        }
        if representatives.windows(2).any(|w| w[0] > w[1]) {
            return Err(Error::CorruptedIndex(
                "bucket representatives are not sorted".into(),
            ));
        }
        Ok(Self {
            boundaries,
            representatives,
        })
    }

    pub fn bits(&self) -> u8 {
        self.representatives.len().trailing_zeros() as u8
    }

    pub fn boundaries(&self) -> &[f32] {
        &self.boundaries
    }

    /// The bucket weights vector used for reconstruction.
    pub fn representatives(&self) -> &[f32] {
        &self.representatives
    }

    /// Bin index of `v`.
    #[inline]
    pub fn quantize(&self, v: f32) -> u8 {
        self.boundaries.partition_point(|&edge| edge <= v) as u8
    }

    #[inline]
    pub fn value(&self, code: u8) -> f32 {
        self.representatives[code as usize]
    }

    /// Buckets for a sample whose values all equal `value`: a grid of spacing
    /// `FALLBACK_SPACING` whose middle representative is exactly `value`.
    pub fn constant_fallback(value: f32, bits: u8) -> Result<Self> {
        if bits != 2 && bits != 4 {
            return Err(Error::InvalidConfig(format!(
                "b must be 2 or 4, got {bits}"
            )));
        }
        let n = 1i32 << bits;
        let rep = |i: i32| value + (i - n / 2) as f32 * FALLBACK_SPACING;
        let representatives = (0..n).map(rep).collect();
        let boundaries = (1..n)
            .map(|i| value + (i - n / 2) as f32 * FALLBACK_SPACING - 0.5 * FALLBACK_SPACING)
            .collect();
        Self::new(boundaries, representatives)
    }

    pub fn max_abs(&self) -> f32 {
        self.representatives
            .iter()
            .fold(0.0f32, |m, v| m.max(v.abs()))
    }
}

pub const FALLBACK_SPACING: f32 = 1e-3;

/// Quantile of sorted data with linear interpolation between order statistics.
fn quantile_sorted(sorted: &[f32], p: f64) -> f32 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    let frac = h - lo as f64;
    (sorted[lo] as f64 + frac * (sorted[hi] as f64 - sorted[lo] as f64)) as f32
}

/// Derives quantile bucket edges and representatives from pooled residual values.
///
/// Edges sit at the `i / 2^b` quantiles and representatives at the
/// `(i + 0.5) / 2^b` quantiles of the sample.
///
/// A value repeated across several quantiles (typically 0 when many tokens sit
/// on their centroid) would produce tied edges. Tied edges are pushed apart
/// one ulp at a time and representatives clamped into their bins, so edges
/// stay strictly ascending at a reconstruction cost of a few ulps.
pub fn compute_bucket_weights(residuals: &[f32], bits: u8) -> Result<BucketWeights> {
    if bits != 2 && bits != 4 {
        return Err(Error::InvalidConfig(format!(
            "b must be 2 or 4, got {bits}"
        )));
    }
    let n_buckets = 1usize << bits;
    if residuals.len() < n_buckets {
        return Err(Error::DegenerateSample);
    }
    let mut sorted = residuals.to_vec();
    sorted.sort_unstable_by(f32::total_cmp);
    if sorted[0] == sorted[sorted.len() - 1] {
        return Err(Error::DegenerateSample);
    }
    let nb = n_buckets as f64;
    let mut boundaries: Vec<f32> = (1..n_buckets)
        .map(|i| quantile_sorted(&sorted, i as f64 / nb))
        .collect();
    for i in 1..boundaries.len() {
        if boundaries[i] <= boundaries[i - 1] {
            boundaries[i] = boundaries[i - 1].next_up();
        }
    }
    let representatives = (0..n_buckets)
        .map(|i| {
            let r = quantile_sorted(&sorted, (i as f64 + 0.5) / nb);
            let lo = if i > 0 {
                boundaries[i - 1]
            } else {
                f32::NEG_INFINITY
            };
            let hi = boundaries.get(i).copied().unwrap_or(f32::INFINITY);
            r.clamp(lo, hi)
        })
        .collect();
    BucketWeights::new(boundaries, representatives)
}

/// Evenly spaced buckets over `[min, max]` of the sample, midpoints as representatives.
pub fn uniform_bucket_weights(residuals: &[f32], bits: u8) -> Result<BucketWeights> {
    if bits != 2 && bits != 4 {
        return Err(Error::InvalidConfig(format!(
            "b must be 2 or 4, got {bits}"
        )));
    }
    let (lo, hi) = residuals
        .iter()
        .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    if !(hi > lo) {
        return Err(Error::DegenerateSample);
    }
    let n = 1usize << bits;
    let width = (hi as f64 - lo as f64) / n as f64;
    let boundaries = (1..n)
        .map(|i| (lo as f64 + width * i as f64) as f32)
        .collect();
    let representatives = (0..n)
        .map(|i| (lo as f64 + width * (i as f64 + 0.5)) as f32)
        .collect();
    BucketWeights::new(boundaries, representatives)
}

/// Mean squared error of quantizing `values` with `weights`.
pub fn quantization_mse(values: &[f32], weights: &BucketWeights) -> f64 {
    let total: f64 = values
        .iter()
        .map(|&v| {
            let e = (v - weights.value(weights.quantize(v))) as f64;
            e * e
        })
        .sum();
    total / values.len() as f64
}
