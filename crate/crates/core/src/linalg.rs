//! Small dense kernels shared by clustering, assignment and centroid scoring.
//!
//! The dot product uses a fixed lane layout so that every code path (scalar
//! fallback or AVX2) performs the same sequence of IEEE operations and
//! returns bit-identical results.

const LANES: usize = 16;

type Lanes = [f32; LANES];

#[inline(always)]
fn lanes(x: &[f32]) -> &Lanes {
    x.try_into().expect("chunk of LANES values")
}

#[inline(always)]
fn fold(mut acc: Lanes) -> f32 {
    // pairwise fold of the lanes
    let mut width = LANES / 2;
    while width > 0 {
        for l in 0..width {
            acc[l] += acc[l + width];
        }
        width /= 2;
    }
    acc[0]
}

#[inline(always)]
fn dot_lanes(a: &[f32], b: &[f32]) -> f32 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f32; LANES];
    let (ca, cb) = (a.chunks_exact(LANES), b.chunks_exact(LANES));
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (xa, xb) in ca.zip(cb) {
        let (xa, xb) = (lanes(xa), lanes(xb));
        for l in 0..LANES {
            acc[l] += xa[l] * xb[l];
        }
    }
    let mut tail = 0.0f32;
    for (x, y) in ra.iter().zip(rb) {
        tail += x * y;
    }
    fold(acc) + tail
}

/// `R` dot products against one shared vector, each with the lane order of `dot_lanes`.
#[inline(always)]
fn dot_rows_lanes<const R: usize>(rows: [&[f32]; R], b: &[f32]) -> [f32; R] {
    let mut acc = [[0.0f32; LANES]; R];
    let chunks = b.len() / LANES;
    for c in 0..chunks {
        let xb = lanes(&b[c * LANES..(c + 1) * LANES]);
        for r in 0..R {
            let xa = lanes(&rows[r][c * LANES..(c + 1) * LANES]);
            for l in 0..LANES {
                acc[r][l] += xa[l] * xb[l];
            }
        }
    }
    std::array::from_fn(|r| {
        let mut tail = 0.0f32;
        for i in chunks * LANES..b.len() {
            tail += rows[r][i] * b[i];
        }
        fold(acc[r]) + tail
    })
}

const BLOCK_ROWS: usize = 4;

/// Explicit AVX2 versions of the lane kernels.
///
/// Lanes 0..8 and 8..16 live in two registers; multiplies and adds are
/// separate instructions (no fused multiply-add) and the final fold follows
/// the scalar pairwise order, so results match the portable code bit for bit.
#[cfg(target_arch = "x86_64")]
mod avx2 {
    use std::arch::x86_64::*;

    use super::LANES;

    #[inline]
    #[target_feature(enable = "avx2")]
    fn fold(lo: __m256, hi: __m256) -> f32 {
        let v = _mm256_add_ps(lo, hi);
        let q = _mm_add_ps(_mm256_castps256_ps128(v), _mm256_extractf128_ps::<1>(v));
        let d = _mm_add_ps(q, _mm_movehl_ps(q, q));
        _mm_cvtss_f32(_mm_add_ss(d, _mm_shuffle_ps::<0b01>(d, d)))
    }

    #[inline]
    #[target_feature(enable = "avx2")]
    pub(super) fn dot_rows<const R: usize>(rows: [&[f32]; R], b: &[f32]) -> [f32; R] {
        let chunks = b.len() / LANES;
        for r in rows {
            assert!(r.len() >= chunks * LANES);
        }
        let mut lo = [_mm256_setzero_ps(); R];
        let mut hi = [_mm256_setzero_ps(); R];
        for c in 0..chunks {
            // SAFETY: every slice holds at least `chunks * LANES` values (checked above).
            unsafe {
                let pb = b.as_ptr().add(c * LANES);
                let (b0, b1) = (_mm256_loadu_ps(pb), _mm256_loadu_ps(pb.add(8)));
                for r in 0..R {
                    let pa = rows[r].as_ptr().add(c * LANES);
                    lo[r] = _mm256_add_ps(lo[r], _mm256_mul_ps(_mm256_loadu_ps(pa), b0));
                    hi[r] = _mm256_add_ps(hi[r], _mm256_mul_ps(_mm256_loadu_ps(pa.add(8)), b1));
                }
            }
        }
        std::array::from_fn(|r| {
            let mut tail = 0.0f32;
            for i in chunks * LANES..b.len() {
                tail += rows[r][i] * b[i];
            }
            fold(lo[r], hi[r]) + tail
        })
    }

    #[target_feature(enable = "avx2")]
    pub(super) fn dots_into(row: &[f32], table: &[f32], dim: usize, out: &mut [f32]) {
        for (o, t) in out.iter_mut().zip(table.chunks_exact(dim)) {
            *o = dot_rows([row], t)[0];
        }
    }

    #[target_feature(enable = "avx2")]
    pub(super) fn nearest_rows(rows: &[f32], table: &[f32], dim: usize, out: &mut [(usize, f32)]) {
        super::nearest_rows_with(
            rows,
            table,
            dim,
            out,
            |r, t| dot_rows(r, t),
            |r, t| dot_rows([r], t)[0],
        )
    }
}

/// Blocked argmax search shared by the portable and AVX2 paths.
#[inline(always)]
fn nearest_rows_with(
    rows: &[f32],
    table: &[f32],
    dim: usize,
    out: &mut [(usize, f32)],
    dot_block: impl Fn([&[f32]; BLOCK_ROWS], &[f32]) -> [f32; BLOCK_ROWS],
    dot_one: impl Fn(&[f32], &[f32]) -> f32,
) {
    let mut blocks = rows.chunks_exact(BLOCK_ROWS * dim);
    let mut o = 0;
    for block in blocks.by_ref() {
        let r: [&[f32]; BLOCK_ROWS] = std::array::from_fn(|i| &block[i * dim..(i + 1) * dim]);
        let mut best = [(0usize, f32::NEG_INFINITY); BLOCK_ROWS];
        for (c, t) in table.chunks_exact(dim).enumerate() {
            let s = dot_block(r, t);
            for i in 0..BLOCK_ROWS {
                if c == 0 || s[i] > best[i].1 {
                    best[i] = (c, s[i]);
                }
            }
        }
        out[o..o + BLOCK_ROWS].copy_from_slice(&best);
        o += BLOCK_ROWS;
    }
    for row in blocks.remainder().chunks_exact(dim) {
        let mut best = (0usize, f32::NEG_INFINITY);
        for (c, t) in table.chunks_exact(dim).enumerate() {
            let s = dot_one(row, t);
            if c == 0 || s > best.1 {
                best = (c, s);
            }
        }
        out[o] = best;
        o += 1;
    }
}

#[inline]
fn has_avx2() -> bool {
    #[cfg(target_arch = "x86_64")]
    {
        std::arch::is_x86_feature_detected!("avx2")
    }
    #[cfg(not(target_arch = "x86_64"))]
    {
        false
    }
}

/// [`nearest`] for every row of a row-major `rows`, blocked so that each table
/// row is loaded once per group of rows. Results equal per-row [`nearest`].
pub fn nearest_rows(rows: &[f32], table: &[f32], dim: usize, out: &mut [(usize, f32)]) {
    assert_eq!(rows.len(), out.len() * dim);
    assert!(!table.is_empty() && table.len() % dim == 0);
    #[cfg(target_arch = "x86_64")]
    if has_avx2() {
        // SAFETY: the feature was detected at runtime.
        unsafe { avx2::nearest_rows(rows, table, dim, out) };
        return;
    }
    nearest_rows_with(rows, table, dim, out, dot_rows_lanes, dot_lanes)
}

/// Inner product of two equal-length slices.
#[inline]
pub fn dot(a: &[f32], b: &[f32]) -> f32 {
    assert_eq!(a.len(), b.len());
    #[cfg(target_arch = "x86_64")]
    if has_avx2() {
        // SAFETY: the feature was detected at runtime.
        return unsafe { avx2::dot_rows([a], b)[0] };
    }
    dot_lanes(a, b)
}

/// Writes `<row, table[c]>` for every row `c` of a row-major `table` into `out`.
pub fn dots_into(row: &[f32], table: &[f32], dim: usize, out: &mut [f32]) {
    assert_eq!(table.len(), out.len() * dim);
    assert_eq!(row.len(), dim);
    #[cfg(target_arch = "x86_64")]
    if has_avx2() {
        // SAFETY: the feature was detected at runtime.
        unsafe { avx2::dots_into(row, table, dim, out) };
        return;
    }
    for (o, t) in out.iter_mut().zip(table.chunks_exact(dim)) {
        *o = dot_lanes(row, t);
    }
}

/// Returns `(argmax, max)` of `<row, table[c]>`; ties resolve to the lowest index.
pub fn nearest(row: &[f32], table: &[f32], dim: usize, scratch: &mut Vec<f32>) -> (usize, f32) {
    let k = table.len() / dim;
    scratch.resize(k, 0.0);
    dots_into(row, table, dim, scratch);
    let mut best = 0;
    let mut best_score = scratch[0];
    for (c, &s) in scratch.iter().enumerate().skip(1) {
        if s > best_score {
            best = c;
            best_score = s;
        }
    }
    (best, best_score)
}

pub fn norm(v: &[f32]) -> f32 {
    dot(v, v).sqrt()
}

/// Scales `v` to unit length. Returns false (leaving `v` untouched) for a zero vector.
pub fn normalize(v: &mut [f32]) -> bool {
    let n = norm(v);
    if n == 0.0 || !n.is_finite() {
        return false;
    }
    let inv = 1.0 / n;
    v.iter_mut().for_each(|x| *x *= inv);
    true
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dot_matches_naive_sum() {
        let a: Vec<f32> = (0..128).map(|i| (i as f32 * 0.37).sin()).collect();
        let b: Vec<f32> = (0..128).map(|i| (i as f32 * 0.11).cos()).collect();
        let naive: f64 = a.iter().zip(&b).map(|(x, y)| *x as f64 * *y as f64).sum();
        assert!((dot(&a, &b) as f64 - naive).abs() < 1e-5);
        assert_eq!(dot(&a, &b).to_bits(), dot_lanes(&a, &b).to_bits());
    }

    #[test]
    fn dispatched_paths_agree_bitwise() {
        let dim = 128;
        let rows: Vec<f32> = (0..9 * dim)
            .map(|i| ((i * 31) % 257) as f32 / 128.0 - 1.0)
            .collect();
        let table: Vec<f32> = (0..23 * dim)
            .map(|i| ((i * 17) % 263) as f32 / 131.0 - 1.0)
            .collect();
        let mut fast = vec![(0, 0.0); 9];
        let mut portable = vec![(0, 0.0); 9];
        nearest_rows(&rows, &table, dim, &mut fast);
        nearest_rows_with(&rows, &table, dim, &mut portable, dot_rows_lanes, dot_lanes);
        for (f, p) in fast.iter().zip(&portable) {
            assert_eq!((f.0, f.1.to_bits()), (p.0, p.1.to_bits()));
        }
        let mut out = vec![0.0; 23];
        dots_into(&rows[..dim], &table, dim, &mut out);
        for (o, t) in out.iter().zip(table.chunks_exact(dim)) {
            assert_eq!(o.to_bits(), dot_lanes(&rows[..dim], t).to_bits());
        }
    }

    #[test]
    fn dot_handles_tails() {
        let a = [1.0, 2.0, 3.0];
        let b = [4.0, 5.0, 6.0];
        assert_eq!(dot(&a, &b), 32.0);
    }

    #[test]
    fn nearest_breaks_ties_low() {
        let table = [1.0, 0.0, 1.0, 0.0, 0.0, 1.0];
        let mut scratch = Vec::new();
        assert_eq!(nearest(&[1.0, 0.0], &table, 2, &mut scratch), (0, 1.0));
    }

    #[test]
    fn blocked_nearest_matches_per_row() {
        let dim = 128;
        let rows: Vec<f32> = (0..11 * dim)
            .map(|i| ((i * 7919) % 1000) as f32 / 500.0 - 1.0)
            .collect();
        let table: Vec<f32> = (0..37 * dim)
            .map(|i| ((i * 104729) % 997) as f32 / 498.0 - 1.0)
            .collect();
        let mut out = vec![(0, 0.0); 11];
        nearest_rows(&rows, &table, dim, &mut out);
        let mut scratch = Vec::new();
        for (r, got) in rows.chunks_exact(dim).zip(&out) {
            let want = nearest(r, &table, dim, &mut scratch);
            assert_eq!(got.0, want.0);
            assert_eq!(got.1.to_bits(), want.1.to_bits());
        }
    }

    #[test]
    fn normalize_rejects_zero() {
        let mut v = [0.0f32; 4];
        assert!(!normalize(&mut v));
        let mut w = [3.0f32, 4.0];
        assert!(normalize(&mut w));
        assert!((norm(&w) - 1.0).abs() < 1e-7);
    }
}
