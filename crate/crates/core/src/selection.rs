//! Subset selectors over the training pool.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::vec::Vec;
use core::cmp::Ordering;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::corpus::Example;
use crate::rng::{self, mix64};
use crate::{math, Error, Result};

/// Bounds for the uniform draw feeding `-ln(-ln u)`.
pub const GUMBEL_U_MIN: f64 = 1e-300;
pub const GUMBEL_U_MAX: f64 = 1.0 - 1e-16;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SelectionConfig {
    /// Fraction of the pool to select.
    pub ratio: f64,
    /// Sampling temperature; zero means deterministic top-k.
    pub tau: f64,
    pub seed: u64,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        Self {
            ratio: 0.2,
            tau: 1.0,
            seed: 0,
        }
    }
}

impl SelectionConfig {
    /// Selected count for a pool of `n`, at least one.
    pub fn k_for(&self, n: usize) -> usize {
        (libm::round(n as f64 * self.ratio) as usize).clamp(1, n.max(1))
    }
}

/// An id with the score it was selected by.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scored {
    pub id: u64,
    pub score: f64,
}

pub fn gumbel_noise(r: &mut rng::Rng) -> f64 {
    let u: f64 = r.random::<f64>().clamp(GUMBEL_U_MIN, GUMBEL_U_MAX);
    -math::ln(-math::ln(u))
}

fn top_k_by_key(items: &[Scored], keys: &[f64], k: usize) -> Vec<Scored> {
    let mut order: Vec<usize> = (0..items.len()).collect();
    order.sort_by(|&a, &b| {
        keys[b]
            .partial_cmp(&keys[a])
            .unwrap_or(Ordering::Equal)
            .then(items[a].id.cmp(&items[b].id))
    });
    order.truncate(k);
    order.into_iter().map(|i| items[i]).collect()
}

/// Gumbel-Top-k: the `k` largest `score/τ + G` with `G` i.i.d. standard
/// Gumbel, drawn in input order from a stream keyed by `seed`. With `τ = 0`
/// this is plain top-k by score, ties broken by ascending id. The result is
/// ordered by decreasing key.
pub fn gumbel_top_k(scores: &[Scored], k: usize, tau: f64, seed: u64) -> Result<Vec<Scored>> {
    if k > scores.len() {
        return Err(Error::contract(format!("select {k} from a pool of {}", scores.len())));
    }
    if !(tau >= 0.0) {
        return Err(Error::config("temperature must be >= 0"));
    }
    if let Some(s) = scores.iter().find(|s| !s.score.is_finite()) {
        return Err(Error::Numeric(format!("score of example {}", s.id)));
    }
    let keys: Vec<f64> = if tau == 0.0 {
        scores.iter().map(|s| s.score).collect()
    } else {
        let mut r = rng::stream(seed, rng::tags::SELECT, 0);
        scores.iter().map(|s| s.score / tau + gumbel_noise(&mut r)).collect()
    };
    Ok(top_k_by_key(scores, &keys, k))
}

/// Uniform sample of `k` ids without replacement.
pub fn random_select(pool: &[u64], k: usize, seed: u64) -> Result<Vec<u64>> {
    if k > pool.len() {
        return Err(Error::contract(format!("select {k} from a pool of {}", pool.len())));
    }
    let mut r = rng::stream(seed, rng::tags::SELECT, 1);
    let picked = rand::seq::index::sample(&mut r, pool.len(), k);
    Ok(picked.into_iter().map(|i| pool[i]).collect())
}

/// Hashed-bigram importance weights against a reference corpus.
#[derive(Debug, Clone, PartialEq)]
pub struct NgramProximity {
    buckets: usize,
    log_ratio: Vec<f64>,
}

/// Default bucket count for hashed bigrams.
pub const NGRAM_BUCKETS: usize = 1 << 16;

fn bigram_bucket(a: u32, b: u32, buckets: usize) -> usize {
    (mix64(mix64(0xb16a_u64 ^ a as u64) ^ b as u64) % buckets as u64) as usize
}

impl NgramProximity {
    /// Add-one smoothed bucket distributions of the reference set and of the
    /// pool; each bucket stores `ln(P_ref / P_pool)`.
    pub fn fit(pool: &[Example], reference: &[Example], buckets: usize) -> Self {
        let counts = |set: &[Example]| {
            let mut c = alloc::vec![0u64; buckets];
            let mut total = 0u64;
            for e in set {
                for w in e.tokens.windows(2) {
                    c[bigram_bucket(w[0], w[1], buckets)] += 1;
                    total += 1;
                }
            }
            (c, total)
        };
        let (c_ref, n_ref) = counts(reference);
        let (c_pool, n_pool) = counts(pool);
        let log_ratio = c_ref
            .iter()
            .zip(&c_pool)
            .map(|(&r, &p)| {
                let pr = (r as f64 + 1.0) / (n_ref as f64 + buckets as f64);
                let pp = (p as f64 + 1.0) / (n_pool as f64 + buckets as f64);
                math::ln(pr / pp)
            })
            .collect();
        Self { buckets, log_ratio }
    }

    /// Mean log-ratio over the example's bigrams; zero without bigrams.
    pub fn weight(&self, tokens: &[u32]) -> f64 {
        let n = tokens.len().saturating_sub(1);
        if n == 0 {
            return 0.0;
        }
        tokens
            .windows(2)
            .map(|w| self.log_ratio[bigram_bucket(w[0], w[1], self.buckets)])
            .sum::<f64>()
            / n as f64
    }

    pub fn weights(&self, pool: &[Example]) -> Vec<Scored> {
        pool.iter()
            .map(|e| Scored {
                id: e.id,
                score: self.weight(&e.tokens),
            })
            .collect()
    }
}

/// Proximity baseline: Gumbel-Top-k at τ = 1 over n-gram importance weights.
pub fn ngram_proximity_select(pool: &[Example], reference: &[Example], k: usize, seed: u64) -> Result<Vec<Scored>> {
    let model = NgramProximity::fit(pool, reference, NGRAM_BUCKETS);
    gumbel_top_k(&model.weights(pool), k, 1.0, seed)
}

/// Map from id to position for fast membership lookups.
pub fn index_by_id(pool: &[Example]) -> BTreeMap<u64, usize> {
    pool.iter().enumerate().map(|(i, e)| (e.id, i)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn scored(v: &[f64]) -> Vec<Scored> {
        v.iter()
            .enumerate()
            .map(|(i, &s)| Scored { id: i as u64, score: s })
            .collect()
    }

    #[test]
    fn zero_temperature_is_top_k() {
        let out = gumbel_top_k(&scored(&[3.0, 1.0, 2.0]), 2, 0.0, 7).unwrap();
        let ids: Vec<u64> = out.iter().map(|s| s.id).collect();
        assert_eq!(ids, vec![0, 2]);
    }

    #[test]
    fn zero_temperature_ties_break_by_id() {
        let out = gumbel_top_k(&scored(&[1.0, 2.0, 2.0, 2.0]), 2, 0.0, 0).unwrap();
        assert_eq!(out.iter().map(|s| s.id).collect::<Vec<_>>(), vec![1, 2]);
    }

    #[test]
    fn k_equal_n_returns_whole_pool() {
        for tau in [0.0, 1.0, 5.0] {
            let mut ids: Vec<u64> = gumbel_top_k(&scored(&[0.1, -4.0, 9.0, 2.0]), 4, tau, 1)
                .unwrap()
                .iter()
                .map(|s| s.id)
                .collect();
            ids.sort();
            assert_eq!(ids, vec![0, 1, 2, 3]);
        }
        let mut r = random_select(&[5, 6, 7], 3, 2).unwrap();
        r.sort();
        assert_eq!(r, vec![5, 6, 7]);
    }

    #[test]
    fn k_above_n_is_contract_error() {
        assert!(matches!(gumbel_top_k(&scored(&[1.0]), 2, 1.0, 0), Err(Error::Contract(_))));
        assert!(random_select(&[1, 2], 3, 0).is_err());
    }

    #[test]
    fn random_select_is_seeded() {
        let pool: Vec<u64> = (100..200).collect();
        assert_eq!(random_select(&pool, 10, 4).unwrap(), random_select(&pool, 10, 4).unwrap());
        assert_ne!(random_select(&pool, 10, 4).unwrap(), random_select(&pool, 10, 5).unwrap());
    }

    #[test]
    fn shift_invariance_with_fixed_seed() {
        let base = scored(&[0.3, -1.2, 2.0, 0.7, 0.0, 1.1, -0.4]);
        let shifted: Vec<Scored> = base.iter().map(|s| Scored { id: s.id, score: s.score + 4.0 }).collect();
        for tau in [0.0, 1.0] {
            let a: Vec<u64> = gumbel_top_k(&base, 3, tau, 11).unwrap().iter().map(|s| s.id).collect();
            let b: Vec<u64> = gumbel_top_k(&shifted, 3, tau, 11).unwrap().iter().map(|s| s.id).collect();
            assert_eq!(a, b);
        }
    }
}
