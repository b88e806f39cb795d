//! Candidate generation: centroid scoring, probe selection and
//! missing-similarity estimates derived from cumulative cluster sizes.

use std::cmp::Ordering;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{QueryEmbeddings, DIM};
use crate::error::{Error, Result};
use crate::index::{CentroidTable, CompressedIndex};
use crate::linalg;
use crate::stride::MissingEstimates;

/// Cumulative cluster-size threshold used for imputation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TPrime {
    Auto,
    Fixed(usize),
}

impl std::str::FromStr for TPrime {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        if s.eq_ignore_ascii_case("auto") {
            return Ok(TPrime::Auto);
        }
        s.parse()
            .map(TPrime::Fixed)
            .map_err(|_| format!("expected `auto` or a positive integer, got {s:?}"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SearchParams {
    /// Clusters probed per query token.
    pub n_probe: usize,
    pub t_prime: TPrime,
    pub t_prime_max: usize,
    pub k: usize,
    pub threads: usize,
}

impl Default for SearchParams {
    fn default() -> Self {
        Self {
            n_probe: 32,
            t_prime: TPrime::Auto,
            t_prime_max: 100_000,
            k: 10,
            threads: 1,
        }
    }
}

impl SearchParams {
    pub fn validate(&self, n_centroids: usize) -> Result<()> {
        if self.n_probe == 0 || self.n_probe > n_centroids {
            return Err(Error::InvalidParams(format!(
                "n_probe must be in 1..={n_centroids}, got {}",
                self.n_probe
            )));
        }
        if self.k == 0 {
            return Err(Error::InvalidParams("k must be at least 1".into()));
        }
        if self.t_prime == TPrime::Fixed(0) {
            return Err(Error::InvalidParams("t_prime must be at least 1".into()));
        }
        if self.threads == 0 {
            return Err(Error::InvalidParams("threads must be at least 1".into()));
        }
        Ok(())
    }

    /// The threshold for an index of `n_tokens` tokens.
    pub fn resolve_t_prime(&self, n_tokens: usize) -> usize {
        match self.t_prime {
            TPrime::Auto => compute_tprime(n_tokens, self.t_prime_max),
            TPrime::Fixed(t) => t,
        }
    }
}

/// `min(t_prime_max, max(1, round(sqrt(n_tokens))))`.
pub fn compute_tprime(n_tokens: usize, t_prime_max: usize) -> usize {
    let t = ((n_tokens as f64).sqrt().round() as usize).max(1);
    t.min(t_prime_max)
}

/// Query-token by centroid cosine scores, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct CentroidScores {
    n_centroids: usize,
    scores: Vec<f32>,
}

impl CentroidScores {
    pub fn n_tokens(&self) -> usize {
        self.scores.len() / self.n_centroids
    }

    pub fn n_centroids(&self) -> usize {
        self.n_centroids
    }

    pub fn row(&self, token: usize) -> &[f32] {
        &self.scores[token * self.n_centroids..(token + 1) * self.n_centroids]
    }

    /// Number of query-centroid inner products evaluated to fill the table.
    pub fn evaluations(&self) -> usize {
        self.scores.len()
    }
}

/// Scores every query token against every centroid.
pub fn score_centroids(q: &QueryEmbeddings, centroids: &CentroidTable) -> CentroidScores {
    let k = centroids.len();
    let mut scores = vec![0.0f32; q.n_tokens() * k];
    scores
        .par_chunks_mut(k)
        .enumerate()
        .for_each(|(i, row)| linalg::dots_into(q.token(i), centroids.as_slice(), DIM, row));
    CentroidScores {
        n_centroids: k,
        scores,
    }
}

/// The clusters probed for one query token and its imputed score.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeSelection {
    pub ids: Vec<u32>,
    /// Centroid scores aligned with `ids`, non-increasing.
    pub scores: Vec<f32>,
    pub missing: f32,
}

#[inline]
fn by_score_desc(row: &[f32]) -> impl Fn(&u32, &u32) -> Ordering + '_ {
    move |&a, &b| row[b as usize].total_cmp(&row[a as usize]).then(a.cmp(&b))
}

/// Picks the `n_probe` best centroids and the missing-similarity estimate.
///
/// Centroids are ranked by descending score, ties to the lower id. The
/// estimate is the score of the first centroid in that order at which the
/// running total of cluster sizes exceeds `t_prime`, or the lowest score if
/// the total never does. Only as much of the order is materialized as the two
/// criteria need.
pub fn select_probes(
    scores_row: &[f32],
    cluster_sizes: &[u32],
    n_probe: usize,
    t_prime: usize,
) -> ProbeSelection {
    let k = scores_row.len();
    assert!(n_probe >= 1 && n_probe <= k, "n_probe must be in 1..=K");
    assert_eq!(cluster_sizes.len(), k);
    let cmp = by_score_desc(scores_row);
    let mut order: Vec<u32> = (0..k as u32).collect();

    // the first `sorted` entries of `order` are final
    let mut sorted = 0;
    let sort_through = |order: &mut Vec<u32>, sorted: &mut usize, upto: usize| {
        let upto = upto.min(k);
        if upto <= *sorted {
            return;
        }
        let rest = &mut order[*sorted..];
        let take = upto - *sorted;
        if take < rest.len() {
            rest.select_nth_unstable_by(take - 1, &cmp);
        }
        rest[..take].sort_unstable_by(&cmp);
        *sorted = upto;
    };

    sort_through(&mut order, &mut sorted, n_probe);
    let mut missing = None;
    let mut cumulative = 0u64;
    let mut walked = 0;
    loop {
        while walked < sorted {
            let c = order[walked] as usize;
            cumulative += cluster_sizes[c] as u64;
            walked += 1;
            if cumulative > t_prime as u64 {
                missing = Some(scores_row[c]);
                break;
            }
        }
        if missing.is_some() || sorted == k {
            break;
        }
        let next = (sorted * 2).max(sorted + 1);
        sort_through(&mut order, &mut sorted, next);
    }
    let missing = missing.unwrap_or_else(|| scores_row[order[k - 1] as usize]);

    let ids = order[..n_probe].to_vec();
    let scores = ids.iter().map(|&c| scores_row[c as usize]).collect();
    ProbeSelection {
        ids,
        scores,
        missing,
    }
}

/// Everything candidate generation hands to the scoring stage.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbePlan {
    pub n_probe: usize,
    pub t_prime: usize,
    /// One selection per query token, in token order.
    pub probes: Vec<ProbeSelection>,
    pub missing: MissingEstimates,
    pub centroid_scores: CentroidScores,
}

impl ProbePlan {
    pub fn n_tokens(&self) -> usize {
        self.probes.len()
    }

    pub fn centroid_score_evaluations(&self) -> usize {
        self.centroid_scores.evaluations()
    }
}

/// Scores centroids once and derives probes and imputation values from them.
pub fn plan(
    q: &QueryEmbeddings,
    index: &CompressedIndex,
    params: &SearchParams,
) -> Result<ProbePlan> {
    params.validate(index.n_centroids())?;
    let t_prime = params.resolve_t_prime(index.n_tokens());
    let centroid_scores = score_centroids(q, index.centroids());
    let probes: Vec<ProbeSelection> = (0..q.n_tokens())
        .into_par_iter()
        .map(|i| {
            select_probes(
                centroid_scores.row(i),
                index.cluster_sizes(),
                params.n_probe,
                t_prime,
            )
        })
        .collect();
    let missing = MissingEstimates::new(probes.iter().map(|p| p.missing).collect());
    Ok(ProbePlan {
        n_probe: params.n_probe,
        t_prime,
        probes,
        missing,
        centroid_scores,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn unit(d: usize) -> Vec<f32> {
        let mut v = vec![0.0; DIM];
        v[d] = 1.0;
        v
    }

    /// Full-sort oracle for the selection rule.
    fn oracle(row: &[f32], sizes: &[u32], n_probe: usize, t: usize) -> ProbeSelection {
        let mut order: Vec<u32> = (0..row.len() as u32).collect();
        order.sort_by(|&a, &b| row[b as usize].total_cmp(&row[a as usize]).then(a.cmp(&b)));
        let mut cum = 0u64;
        let mut missing = row[*order.last().unwrap() as usize];
        for &c in &order {
            cum += sizes[c as usize] as u64;
            if cum > t as u64 {
                missing = row[c as usize];
                break;
            }
        }
        ProbeSelection {
            ids: order[..n_probe].to_vec(),
            scores: order[..n_probe].iter().map(|&c| row[c as usize]).collect(),
            missing,
        }
    }

    #[test]
    fn hand_evaluated_rule() {
        let s = select_probes(&[0.9, 0.8, 0.7, 0.5], &[2, 3, 5, 10], 2, 4);
        assert_eq!(s.ids, vec![0, 1]);
        assert_eq!(s.scores, vec![0.9, 0.8]);
        assert_eq!(s.missing, 0.8);
    }

    #[test]
    fn zero_threshold_takes_top_score() {
        let s = select_probes(&[0.1, 0.6, 0.3], &[4, 1, 2], 1, 0);
        assert_eq!(s.missing, 0.6);
    }

    #[test]
    fn unreachable_threshold_takes_minimum() {
        let s = select_probes(&[0.1, 0.6, -0.3, 0.2], &[4, 1, 2, 1], 2, 8);
        assert_eq!(s.missing, -0.3);
        assert_eq!(s.ids, vec![1, 3]);
    }

    #[test]
    fn threshold_beyond_probe_region() {
        let row = [0.9, 0.8, 0.7, 0.6, 0.5, 0.4];
        let s = select_probes(&row, &[1, 1, 1, 1, 1, 1], 2, 4);
        assert_eq!(s.missing, 0.5);
        assert!(s.missing <= *s.scores.last().unwrap());
    }

    #[test]
    fn ties_resolve_to_lower_id() {
        let s = select_probes(&[0.5, 0.7, 0.5, 0.7], &[1, 1, 1, 1], 3, 100);
        assert_eq!(s.ids, vec![1, 3, 0]);
    }

    #[test]
    fn tprime_rule() {
        assert_eq!(compute_tprime(1_000_000, 50_000), 1000);
        assert_eq!(compute_tprime(100, 5), 5);
        assert_eq!(compute_tprime(1, 100_000), 1);
    }

    #[test]
    fn centroid_scores_hit_unit_cases() {
        let table = CentroidTable::new(2, [unit(0), unit(1)].concat()).unwrap();
        let q = QueryEmbeddings::new(unit(0)).unwrap();
        let s = score_centroids(&q, &table);
        assert!((s.row(0)[0] - 1.0).abs() <= 1e-6);
        assert!(s.row(0)[1].abs() <= 1e-6);
        assert_eq!(s.evaluations(), 2);
    }

    #[test]
    fn centroid_scores_match_scalar_dot() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        let mut rows = |n: usize| {
            let mut v: Vec<f32> = (0..n * DIM).map(|_| rng.random_range(-1.0..1.0)).collect();
            for r in v.chunks_exact_mut(DIM) {
                linalg::normalize(r);
            }
            v
        };
        let q = QueryEmbeddings::new(rows(4)).unwrap();
        let table = CentroidTable::new(8, rows(8)).unwrap();
        let s = score_centroids(&q, &table);
        for i in 0..4 {
            for c in 0..8 {
                let scalar: f32 = q
                    .token(i)
                    .iter()
                    .zip(table.row(c))
                    .map(|(a, b)| a * b)
                    .sum();
                assert!((s.row(i)[c] - scalar).abs() <= 1e-6);
            }
        }
    }

    #[test]
    fn invalid_params_are_rejected() {
        let p = SearchParams {
            n_probe: 9,
            ..Default::default()
        };
        assert!(p.validate(8).is_err());
        assert!(SearchParams {
            k: 0,
            n_probe: 1,
            ..Default::default()
        }
        .validate(8)
        .is_err());
        assert!(SearchParams {
            t_prime: TPrime::Fixed(0),
            n_probe: 1,
            ..Default::default()
        }
        .validate(8)
        .is_err());
    }

    proptest! {
        #[test]
        fn matches_full_sort_oracle(
            row in prop::collection::vec(-4i32..4, 1..60),
            sizes_seed in prop::collection::vec(0u32..6, 60),
            n_probe_frac in 0.0f64..1.0,
            t in 0usize..80,
        ) {
            // coarse integer scores force plenty of ties
            let row: Vec<f32> = row.iter().map(|&x| x as f32 * 0.25).collect();
            let sizes = &sizes_seed[..row.len()];
            let n_probe = 1 + ((row.len() - 1) as f64 * n_probe_frac) as usize;
            let got = select_probes(&row, sizes, n_probe, t);
            prop_assert_eq!(&got, &oracle(&row, sizes, n_probe, t));
            prop_assert!(got.scores.windows(2).all(|w| w[0] >= w[1]));
            prop_assert!(got.missing <= got.scores[0]);
        }

        #[test]
        fn probe_sets_are_nested(row in prop::collection::vec(-1.0f32..1.0, 2..40), a in 1usize..40, b in 1usize..40) {
            let k = row.len();
            let (a, b) = ((a - 1) % k + 1, (b - 1) % k + 1);
            let (a, b) = (a.min(b), a.max(b));
            let sizes = vec![1u32; k];
            let small = select_probes(&row, &sizes, a, 3);
            let large = select_probes(&row, &sizes, b, 3);
            prop_assert_eq!(&small.ids[..], &large.ids[..a]);
        }

        #[test]
        fn equal_scores_are_permutation_invariant(perm_seed in any::<u64>()) {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let row = [0.3f32, 0.3, 0.9, 0.3, 0.1, 0.9];
            let sizes = [2u32, 1, 3, 1, 2, 2];
            let base = select_probes(&row, &sizes, 4, 5);
            // permuting positions and relabeling keeps the (score, id) ranking rule
            let mut perm: Vec<usize> = (0..row.len()).collect();
            perm.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(perm_seed));
            let prow: Vec<f32> = perm.iter().map(|&p| row[p]).collect();
            let psizes: Vec<u32> = perm.iter().map(|&p| sizes[p]).collect();
            let got = select_probes(&prow, &psizes, 4, 5);
            prop_assert_eq!(&got.scores, &base.scores);
            prop_assert_eq!(got.missing, base.missing);
            prop_assert_eq!(&got, &oracle(&prow, &psizes, 4, 5));
        }
    }
}
