//! Spherical k-means with k-means++ seeding.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::CentroidTable;
use crate::corpus::DIM;
use crate::error::{Error, Result};
use crate::linalg;

const ASSIGN_CHUNK: usize = 256;

/// Nearest centroid (by cosine) and its score for every row of `points`.
pub(crate) fn assign(points: &[f32], centroids: &[f32]) -> Vec<(u32, f32)> {
    points
        .par_chunks(ASSIGN_CHUNK * DIM)
        .flat_map_iter(|chunk| {
            let mut out = vec![(0usize, 0.0f32); chunk.len() / DIM];
            linalg::nearest_rows(chunk, centroids, DIM, &mut out);
            out.into_iter().map(|(c, s)| (c as u32, s))
        })
        .collect()
}

fn seed_plus_plus(points: &[f32], k: usize, rng: &mut ChaCha8Rng) -> Vec<f32> {
    let n = points.len() / DIM;
    let mut centroids = Vec::with_capacity(k * DIM);
    let first = rng.random_range(0..n);
    centroids.extend_from_slice(&points[first * DIM..(first + 1) * DIM]);
    // squared euclidean distance to the closest chosen centroid; 2 - 2cos on the sphere
    let mut dist: Vec<f64> = points
        .par_chunks_exact(DIM)
        .map(|p| (2.0 - 2.0 * linalg::dot(p, &centroids[..DIM]) as f64).max(0.0))
        .collect();
    let mut chosen = vec![false; n];
    chosen[first] = true;
    for _ in 1..k {
        let total: f64 = dist.iter().sum();
        let next = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut pick = None;
            for (i, &d) in dist.iter().enumerate() {
                if d <= 0.0 {
                    continue;
                }
                pick = Some(i);
                if target < d {
                    break;
                }
                target -= d;
            }
            pick.expect("positive total implies a positive entry")
        } else {
            // every point coincides with a chosen centroid; fall back to an unused row
            let unused: Vec<usize> = (0..n).filter(|&i| !chosen[i]).collect();
            unused[rng.random_range(0..unused.len())]
        };
        chosen[next] = true;
        let c = &points[next * DIM..(next + 1) * DIM];
        centroids.extend_from_slice(c);
        dist.par_iter_mut()
            .zip(points.par_chunks_exact(DIM))
            .for_each(|(d, p)| {
                let nd = (2.0 - 2.0 * linalg::dot(p, c) as f64).max(0.0);
                if nd < *d {
                    *d = nd;
                }
            });
    }
    centroids
}

/// Trains `k` unit-norm centroids on the rows of `sample` (row-major, 128 columns).
///
/// Each iteration assigns every row to its highest-cosine centroid (ties to the
/// lowest id), replaces each centroid by the normalized mean of its members, and
/// re-seeds empty clusters with the rows farthest from their current centroids.
pub fn train_centroids(sample: &[f32], k: usize, iters: usize, seed: u64) -> Result<CentroidTable> {
    let n = sample.len() / DIM;
    if k == 0 {
        return Err(Error::InvalidConfig("need at least one centroid".into()));
    }
    if iters == 0 {
        return Err(Error::InvalidConfig(
            "kmeans_iters must be at least 1".into(),
        ));
    }
    if k > n {
        return Err(Error::TooFewSamples { k, n });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = seed_plus_plus(sample, k, &mut rng);

    for _ in 0..iters {
        let assignment = assign(sample, &centroids);
        let mut sums = vec![0.0f64; k * DIM];
        let mut counts = vec![0usize; k];
        for (p, &(c, _)) in sample.chunks_exact(DIM).zip(&assignment) {
            let c = c as usize;
            counts[c] += 1;
            for (s, &x) in sums[c * DIM..(c + 1) * DIM].iter_mut().zip(p) {
                *s += x as f64;
            }
        }

        let mut empty: Vec<usize> = (0..k).filter(|&c| counts[c] == 0).collect();
        if !empty.is_empty() {
            // farthest rows first; ties by row id
            let mut order: Vec<usize> = (0..n).collect();
            order.sort_by(|&a, &b| assignment[a].1.total_cmp(&assignment[b].1).then(a.cmp(&b)));
            let mut donors = order.into_iter();
            for c in empty.drain(..) {
                // skip rows that are the only member of their cluster
                let row = donors
                    .by_ref()
                    .find(|&r| counts[assignment[r].0 as usize] > 1)
                    .unwrap_or(0);
                let from = assignment[row].0 as usize;
                counts[from] -= 1;
                let p = &sample[row * DIM..(row + 1) * DIM];
                for d in 0..DIM {
                    sums[from * DIM + d] -= p[d] as f64;
                    sums[c * DIM + d] = p[d] as f64;
                }
                counts[c] = 1;
            }
        }

        for c in 0..k {
            let mut mean: Vec<f32> = sums[c * DIM..(c + 1) * DIM]
                .iter()
                .map(|&s| s as f32)
                .collect();
            if linalg::normalize(&mut mean) {
                centroids[c * DIM..(c + 1) * DIM].copy_from_slice(&mean);
            }
        }
    }
    CentroidTable::new(k, centroids)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::synth_corpus;

    #[test]
    fn single_centroid_is_normalized_mean() {
        let c = synth_corpus(1, 20, (2, 4), 3);
        let table = train_centroids(c.vectors(), 1, 3, 0).unwrap();
        let mut mean = vec![0.0f64; DIM];
        for t in 0..c.n_tokens() {
            for (m, x) in mean.iter_mut().zip(c.token(t)) {
                *m += *x as f64;
            }
        }
        let norm = mean.iter().map(|x| x * x).sum::<f64>().sqrt();
        for (a, m) in table.row(0).iter().zip(&mean) {
            assert!((*a as f64 - m / norm).abs() < 1e-5);
        }
    }

    #[test]
    fn orthonormal_points_are_their_own_centroids() {
        let k = 8;
        let mut sample = vec![0.0f32; k * DIM];
        for i in 0..k {
            sample[i * DIM + i * 3] = 1.0;
        }
        let table = train_centroids(&sample, k, 5, 11).unwrap();
        let mut found: Vec<usize> = (0..k)
            .map(|c| {
                (0..k)
                    .position(|i| table.row(c) == &sample[i * DIM..(i + 1) * DIM])
                    .expect("centroid equals a sample vector")
            })
            .collect();
        found.sort();
        assert_eq!(found, (0..k).collect::<Vec<_>>());
    }

    #[test]
    fn too_many_centroids_is_an_error() {
        let sample = vec![0.0f32; 3 * DIM];
        assert!(matches!(
            train_centroids(&sample, 4, 1, 0),
            Err(Error::TooFewSamples { k: 4, n: 3 })
        ));
    }

    #[test]
    fn beats_random_assignment() {
        let c = synth_corpus(3, 300, (4, 8), 12);
        let k = 16;
        let table = train_centroids(c.vectors(), k, 10, 3).unwrap();
        let trained: f64 = assign(c.vectors(), table.as_slice())
            .iter()
            .map(|&(_, s)| s as f64)
            .sum::<f64>()
            / c.n_tokens() as f64;

        // random-assignment oracle: cosine to the normalized mean of a random partition
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let labels: Vec<usize> = (0..c.n_tokens()).map(|_| rng.random_range(0..k)).collect();
        let mut sums = vec![0.0f64; k * DIM];
        for (t, &l) in labels.iter().enumerate() {
            for (s, x) in sums[l * DIM..(l + 1) * DIM].iter_mut().zip(c.token(t)) {
                *s += *x as f64;
            }
        }
        let mut means = vec![0.0f32; k * DIM];
        for l in 0..k {
            let row = &sums[l * DIM..(l + 1) * DIM];
            let norm = row.iter().map(|x| x * x).sum::<f64>().sqrt();
            for d in 0..DIM {
                means[l * DIM + d] = (row[d] / norm) as f32;
            }
        }
        let random: f64 = labels
            .iter()
            .enumerate()
            .map(|(t, &l)| linalg::dot(c.token(t), &means[l * DIM..(l + 1) * DIM]) as f64)
            .sum::<f64>()
            / c.n_tokens() as f64;
        assert!(trained > random, "trained {trained} vs random {random}");
    }

    #[test]
    fn training_is_deterministic() {
        let c = synth_corpus(5, 100, (4, 8), 8);
        let a = train_centroids(c.vectors(), 12, 5, 9).unwrap();
        let b = train_centroids(c.vectors(), 12, 5, 9).unwrap();
        assert_eq!(a, b);
        for r in 0..12 {
            assert!((linalg::norm(a.row(r)) - 1.0).abs() < 1e-5);
        }
    }
}
