//! The learned data influence model.
//!
//! A sequence is mapped to a hashed n-gram feature vector (orders 1 to 3,
//! counted per chunk, chunks mean-pooled, L2-normalized) and a small
//! regression head maps the features to a scalar. The head is trained with
//! MSE against z-scored oracle influences and validated by Spearman
//! correlation on a held-out slice of the oracle records.

use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::exec::Executor;
use crate::optim::AdamState;
use crate::rng::{self, mix64};
use crate::stats::spearman;
use crate::{math, Error, Result};

/// Sparse non-negative feature vector with strictly increasing indices.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct FeatureVec {
    pub indices: Vec<u32>,
    pub values: Vec<f64>,
}

impl FeatureVec {
    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    pub fn norm(&self) -> f64 {
        math::sqrt(self.values.iter().map(|v| v * v).sum())
    }

    pub fn dot(&self, other: &FeatureVec) -> f64 {
        let (mut i, mut j, mut acc) = (0, 0, 0.0);
        while i < self.indices.len() && j < other.indices.len() {
            match self.indices[i].cmp(&other.indices[j]) {
                core::cmp::Ordering::Less => i += 1,
                core::cmp::Ordering::Greater => j += 1,
                core::cmp::Ordering::Equal => {
                    acc += self.values[i] * other.values[j];
                    i += 1;
                    j += 1;
                }
            }
        }
        acc
    }

    pub fn to_dense(&self, dim: usize) -> Vec<f64> {
        let mut out = vec![0.0; dim];
        for (&i, &v) in self.indices.iter().zip(&self.values) {
            out[i as usize] = v;
        }
        out
    }

    fn iter(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.indices.iter().map(|&i| i as usize).zip(self.values.iter().copied())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Featurizer {
    pub dim: usize,
    pub max_order: usize,
    pub seed: u64,
    /// Sequences longer than this are featurized chunk by chunk.
    pub chunk_len: usize,
}

impl Default for Featurizer {
    fn default() -> Self {
        Self {
            dim: 4096,
            max_order: 3,
            seed: 0x5eed,
            chunk_len: 32,
        }
    }
}

impl Featurizer {
    fn bucket(&self, gram: &[u32]) -> u32 {
        let mut h = mix64(self.seed ^ mix64(gram.len() as u64));
        for &t in gram {
            h = mix64(h ^ t as u64);
        }
        (h % self.dim as u64) as u32
    }

    fn chunk_counts(&self, chunk: &[u32], out: &mut Vec<u32>) {
        out.clear();
        for order in 1..=self.max_order {
            for gram in chunk.windows(order) {
                out.push(self.bucket(gram));
            }
        }
        out.sort_unstable();
    }

    pub fn featurize(&self, tokens: &[u32]) -> FeatureVec {
        if tokens.is_empty() {
            return FeatureVec::default();
        }
        let chunks: Vec<&[u32]> = tokens.chunks(self.chunk_len.max(1)).collect();
        let mut pooled: Vec<(u32, f64)> = Vec::new();
        let mut buckets = Vec::new();
        for chunk in &chunks {
            self.chunk_counts(chunk, &mut buckets);
            let mut counts: Vec<(u32, f64)> = Vec::new();
            for &b in &buckets {
                match counts.last_mut() {
                    Some((last, c)) if *last == b => *c += 1.0,
                    _ => counts.push((b, 1.0)),
                }
            }
            let norm = math::sqrt(counts.iter().map(|(_, c)| c * c).sum());
            pooled.extend(counts.into_iter().map(|(b, c)| (b, c / norm)));
        }
        pooled.sort_by_key(|&(b, _)| b);
        let mut fv = FeatureVec::default();
        for (b, v) in pooled {
            if fv.indices.last() == Some(&b) {
                *fv.values.last_mut().unwrap() += v;
            } else {
                fv.indices.push(b);
                fv.values.push(v);
            }
        }
        // mean pooling is a uniform scale, absorbed by the final normalization
        let norm = fv.norm();
        fv.values.iter_mut().for_each(|v| *v /= norm);
        fv
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Head {
    Linear,
    /// One tanh hidden layer of the given width.
    Mlp { hidden: usize },
}

/// Regression head over a flat parameter vector.
///
/// Linear layout: `w[F], b`. MLP layout: `w1[F×H], b1[H], w2[H], b2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Regressor {
    pub head: Head,
    pub dim: usize,
    pub params: Vec<f64>,
}

impl Regressor {
    pub fn param_len(head: Head, dim: usize) -> usize {
        match head {
            Head::Linear => dim + 1,
            Head::Mlp { hidden } => dim * hidden + 2 * hidden + 1,
        }
    }

    /// Linear heads start at zero; MLP first layers from N(0, 0.01²) with a
    /// zero output layer.
    pub fn new(head: Head, dim: usize, seed: u64) -> Self {
        let mut params = vec![0.0; Self::param_len(head, dim)];
        if let Head::Mlp { hidden } = head {
            let mut r = rng::stream(seed, rng::tags::FIT, 1);
            let normal = Normal::new(0.0, 0.01).expect("positive std");
            for p in &mut params[..dim * hidden] {
                *p = normal.sample(&mut r);
            }
        }
        Self { head, dim, params }
    }

    pub fn from_params(head: Head, dim: usize, params: Vec<f64>) -> Result<Self> {
        if params.len() != Self::param_len(head, dim) {
            return Err(Error::contract("regressor parameter count does not match head"));
        }
        Ok(Self { head, dim, params })
    }

    pub fn predict(&self, x: &FeatureVec) -> f64 {
        match self.head {
            Head::Linear => {
                let (w, b) = self.params.split_at(self.dim);
                x.iter().map(|(i, v)| w[i] * v).sum::<f64>() + b[0]
            }
            Head::Mlp { hidden } => {
                let mut h = vec![0.0; hidden];
                self.mlp_hidden(x, &mut h);
                let off = self.dim * hidden + hidden;
                let w2 = &self.params[off..off + hidden];
                h.iter().zip(w2).map(|(a, b)| a * b).sum::<f64>() + self.params[off + hidden]
            }
        }
    }

    fn mlp_hidden(&self, x: &FeatureVec, h: &mut [f64]) {
        let hidden = h.len();
        let b1 = &self.params[self.dim * hidden..self.dim * hidden + hidden];
        h.copy_from_slice(b1);
        for (i, v) in x.iter() {
            let row = &self.params[i * hidden..(i + 1) * hidden];
            h.iter_mut().zip(row).for_each(|(a, w)| *a += w * v);
        }
        h.iter_mut().for_each(|a| *a = math::tanh(*a));
    }

    /// Adds `scale · ∂prediction/∂params` into `grad`.
    fn accumulate_grad(&self, x: &FeatureVec, scale: f64, grad: &mut [f64]) {
        match self.head {
            Head::Linear => {
                for (i, v) in x.iter() {
                    grad[i] += scale * v;
                }
                grad[self.dim] += scale;
            }
            Head::Mlp { hidden } => {
                let mut h = vec![0.0; hidden];
                self.mlp_hidden(x, &mut h);
                let off = self.dim * hidden + hidden;
                for k in 0..hidden {
                    let w2 = self.params[off + k];
                    grad[off + k] += scale * h[k];
                    let dpre = scale * w2 * (1.0 - h[k] * h[k]);
                    grad[self.dim * hidden + k] += dpre;
                    for (i, v) in x.iter() {
                        grad[i * hidden + k] += dpre * v;
                    }
                }
                grad[off + hidden] += scale;
            }
        }
    }

    /// Multiply-adds for one forward pass.
    pub fn forward_flops(&self, x: &FeatureVec) -> u64 {
        let nnz = x.nnz() as u64;
        match self.head {
            Head::Linear => 2 * nnz + 1,
            Head::Mlp { hidden } => {
                let h = hidden as u64;
                2 * nnz * h + 3 * h + 1
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitInit {
    Fresh,
    ContinueFromLast,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    pub validation_fraction: f64,
    pub init: FitInit,
    pub head: Head,
    pub seed: u64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            epochs: 5,
            batch: 256,
            lr: 1e-2,
            validation_fraction: 0.1,
            init: FitInit::ContinueFromLast,
            head: Head::Linear,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    /// `None` when predictions or targets on the validation slice are constant.
    pub validation_spearman: Option<f64>,
    pub train_mse: f64,
    pub train_count: usize,
    pub validation_count: usize,
    pub target_mean: f64,
    pub target_sd: f64,
    pub flops: u64,
    pub validation_ids: Vec<usize>,
}

pub const MIN_FIT_RECORDS: usize = 20;

/// Train/validation index split used by [`fit`].
pub fn validation_split(n: usize, fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng::stream(seed, rng::tags::FIT, 0));
    let n_val = (libm::ceil(n as f64 * fraction) as usize).clamp(2, n - 1);
    let train = idx.split_off(n_val);
    (train, idx)
}

/// Trains a regression head on `(features, influence)` pairs.
///
/// `previous` is used as the starting point when `cfg.init` is
/// `ContinueFromLast` and its shape matches; otherwise a fresh head is built.
pub fn fit(
    previous: Option<&Regressor>,
    features: &[FeatureVec],
    targets: &[f64],
    dim: usize,
    cfg: &FitConfig,
) -> Result<(Regressor, FitReport)> {
    if features.len() != targets.len() {
        return Err(Error::contract("fit: feature and target counts differ"));
    }
    let n = targets.len();
    if n < MIN_FIT_RECORDS {
        return Err(Error::contract(alloc::format!(
            "fit: need at least {MIN_FIT_RECORDS} records, got {n}"
        )));
    }
    if targets.iter().any(|t| !t.is_finite()) {
        return Err(Error::Numeric("influence targets".into()));
    }
    if targets.iter().all(|&t| t == targets[0]) {
        return Err(Error::DegenerateTarget(n));
    }
    if !(cfg.validation_fraction > 0.0 && cfg.validation_fraction < 1.0) {
        return Err(Error::config("validation fraction must lie in (0, 1)"));
    }
    if cfg.batch == 0 {
        return Err(Error::config("fit batch size must be positive"));
    }

    let (train, val) = validation_split(n, cfg.validation_fraction, cfg.seed);
    let train_targets: Vec<f64> = train.iter().map(|&i| targets[i]).collect();
    let mean = crate::stats::mean(&train_targets);
    let sd = crate::stats::std_dev(&train_targets).max(1e-12);
    let z: Vec<f64> = targets.iter().map(|t| (t - mean) / sd).collect();

    let mut reg = match (cfg.init, previous) {
        (FitInit::ContinueFromLast, Some(p)) if p.head == cfg.head && p.dim == dim => p.clone(),
        _ => Regressor::new(cfg.head, dim, cfg.seed),
    };
    let mut adam = AdamState::new(reg.params.len());
    let mut grad = vec![0.0; reg.params.len()];
    let mut order = train.clone();
    let mut r = rng::stream(cfg.seed, rng::tags::FIT, 2);
    let mut flops = 0u64;
    let mut last_mse = 0.0;
    for _ in 0..cfg.epochs {
        order.shuffle(&mut r);
        let mut sq = 0.0;
        for batch in order.chunks(cfg.batch) {
            grad.iter_mut().for_each(|g| *g = 0.0);
            let inv = 1.0 / batch.len() as f64;
            for &i in batch {
                let err = reg.predict(&features[i]) - z[i];
                sq += err * err;
                reg.accumulate_grad(&features[i], 2.0 * err * inv, &mut grad);
                flops += 3 * reg.forward_flops(&features[i]);
            }
            adam.update(&mut reg.params, &grad, cfg.lr);
        }
        last_mse = sq / order.len() as f64;
    }

    let preds: Vec<f64> = val.iter().map(|&i| reg.predict(&features[i])).collect();
    flops += val.iter().map(|&i| reg.forward_flops(&features[i])).sum::<u64>();
    let actual: Vec<f64> = val.iter().map(|&i| targets[i]).collect();
    let validation_spearman = spearman(&preds, &actual).ok();
    let report = FitReport {
        validation_spearman,
        train_mse: last_mse,
        train_count: train.len(),
        validation_count: val.len(),
        target_mean: mean,
        target_sd: sd,
        flops,
        validation_ids: val,
    };
    Ok((reg, report))
}

/// Scores every feature vector; returns scores in input order and the total
/// forward FLOPs spent.
pub fn predict_pool<E: Executor>(exec: &E, reg: &Regressor, features: &[FeatureVec]) -> (Vec<f64>, u64) {
    let scores = exec.map(features, |f| reg.predict(f));
    let flops = features.iter().map(|f| reg.forward_flops(f)).sum();
    (scores, flops)
}
