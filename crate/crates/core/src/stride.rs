//! Strides and the missing-similarity estimates that fill their gaps.

use crate::error::{Error, Result};

/// Sorted, key-unique `(doc id, partial score)` pairs.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Stride {
    keys: Vec<u32>,
    values: Vec<f32>,
}

impl Stride {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_capacity(n: usize) -> Self {
        Self {
            keys: Vec::with_capacity(n),
            values: Vec::with_capacity(n),
        }
    }

    /// Builds a stride from parallel vectors; keys must be strictly ascending.
    pub fn from_parts(keys: Vec<u32>, values: Vec<f32>) -> Result<Self> {
        if keys.len() != values.len() {
            return Err(Error::InvalidParams(format!(
                "stride has {} keys and {} values",
                keys.len(),
                values.len()
            )));
        }
        if keys.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidParams(
                "stride keys must be strictly ascending".into(),
            ));
        }
        Ok(Self { keys, values })
    }

    /// Builds a stride from `(key, value)` pairs in strictly ascending key order.
    pub fn from_pairs(pairs: impl IntoIterator<Item = (u32, f32)>) -> Result<Self> {
        let (keys, values) = pairs.into_iter().unzip();
        Self::from_parts(keys, values)
    }

    pub(crate) fn from_parts_unchecked(keys: Vec<u32>, values: Vec<f32>) -> Self {
        debug_assert!(keys.windows(2).all(|w| w[0] < w[1]));
        debug_assert_eq!(keys.len(), values.len());
        Self { keys, values }
    }

    pub fn keys(&self) -> &[u32] {
        &self.keys
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (u32, f32)> + '_ {
        self.keys.iter().copied().zip(self.values.iter().copied())
    }

    /// Value stored under `key`, if any.
    pub fn get(&self, key: u32) -> Option<f32> {
        self.keys.binary_search(&key).ok().map(|i| self.values[i])
    }

    pub(crate) fn clear(&mut self) {
        self.keys.clear();
        self.values.clear();
    }

    #[inline]
    pub(crate) fn push(&mut self, key: u32, value: f32) {
        self.keys.push(key);
        self.values.push(value);
    }
}

/// Exact fixed-point score with 32 fractional bits.
///
/// Document-level sums are accumulated in this representation so that every
/// association order yields the same bits. Each f32 operand is rounded once on
/// entry (error below 2^-33) and the final sum is rounded once on exit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Default, Hash)]
pub struct FixedScore(i64);

impl FixedScore {
    const ONE: f64 = (1u64 << 32) as f64;

    #[inline]
    pub fn from_f32(v: f32) -> Self {
        // `as` saturates; scores are bounded far below 2^31
        Self((v as f64 * Self::ONE).round() as i64)
    }

    #[inline]
    pub fn to_f32(self) -> f32 {
        (self.0 as f64 / Self::ONE) as f32
    }

    #[inline]
    pub fn raw(self) -> i64 {
        self.0
    }
}

impl std::ops::Add for FixedScore {
    type Output = Self;

    #[inline]
    fn add(self, rhs: Self) -> Self {
        Self(self.0.wrapping_add(rhs.0))
    }
}

impl std::ops::Sub for FixedScore {
    type Output = Self;

    #[inline]
    fn sub(self, rhs: Self) -> Self {
        Self(self.0.wrapping_sub(rhs.0))
    }
}

/// Per-query-token missing-similarity estimates and their prefix sums.
#[derive(Debug, Clone, PartialEq)]
pub struct MissingEstimates {
    values: Vec<f32>,
    // prefix[j] = m_0 + ... + m_{j-1}; prefix[0] = 0
    prefix: Vec<FixedScore>,
}

impl MissingEstimates {
    pub fn new(values: Vec<f32>) -> Self {
        let mut prefix = Vec::with_capacity(values.len() + 1);
        let mut acc = FixedScore::default();
        prefix.push(acc);
        for &m in &values {
            acc = acc + FixedScore::from_f32(m);
            prefix.push(acc);
        }
        Self { values, prefix }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    /// Running totals `p_0 = 0, p_1 = m_0, ..., p_n = m_0 + ... + m_{n-1}`.
    pub fn prefix_sums(&self) -> Vec<f32> {
        self.prefix.iter().map(|p| p.to_f32()).collect()
    }

    /// `m_lo + ... + m_hi` (0-based, inclusive) as a prefix-sum difference.
    #[inline]
    pub fn interval_fixed(&self, lo: usize, hi: usize) -> FixedScore {
        self.prefix[hi + 1] - self.prefix[lo]
    }

    pub fn interval_sum(&self, lo: usize, hi: usize) -> f32 {
        self.interval_fixed(lo, hi).to_f32()
    }

    pub fn total(&self) -> f32 {
        self.prefix.last().copied().unwrap_or_default().to_f32()
    }
}
