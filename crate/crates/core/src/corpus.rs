//! Synthetic mixed-quality corpus with planted ground truth.
//!
//! Clean sequences come from a sparse order-2 Markov grammar; noise sequences
//! are i.i.d. uniform tokens; shuffled sequences are clean sequences with their
//! token order permuted. The quality tag travels with each example for
//! auditing, but selectors never read it.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::vec::Vec;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::rng::{self, Rng};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QualityTag {
    Clean,
    Noise,
    Shuffled,
}

impl QualityTag {
    pub const ALL: [QualityTag; 3] = [QualityTag::Clean, QualityTag::Noise, QualityTag::Shuffled];

    pub fn as_str(self) -> &'static str {
        match self {
            QualityTag::Clean => "clean",
            QualityTag::Noise => "noise",
            QualityTag::Shuffled => "shuffled",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitKind {
    Train,
    Holdout,
    Reference,
}

impl SplitKind {
    pub fn as_str(self) -> &'static str {
        match self {
            SplitKind::Train => "train",
            SplitKind::Holdout => "holdout",
            SplitKind::Reference => "reference",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Example {
    pub id: u64,
    pub tokens: Vec<u32>,
    pub quality: QualityTag,
}

impl AsRef<[u32]> for Example {
    fn as_ref(&self) -> &[u32] {
        &self.tokens
    }
}

/// Train pool, hold-out set and reference set.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct CorpusSplit {
    pub train_pool: Vec<Example>,
    pub holdout: Vec<Example>,
    pub reference: Vec<Example>,
}

impl CorpusSplit {
    pub fn split(&self, kind: SplitKind) -> &[Example] {
        match kind {
            SplitKind::Train => &self.train_pool,
            SplitKind::Holdout => &self.holdout,
            SplitKind::Reference => &self.reference,
        }
    }

    pub fn iter_tagged(&self) -> impl Iterator<Item = (SplitKind, &Example)> {
        self.train_pool
            .iter()
            .map(|e| (SplitKind::Train, e))
            .chain(self.holdout.iter().map(|e| (SplitKind::Holdout, e)))
            .chain(self.reference.iter().map(|e| (SplitKind::Reference, e)))
    }

    /// Checks non-empty sequences, token range, length bound, id uniqueness
    /// across all splits, and that the reference split is clean-only.
    pub fn validate(&self, vocab_size: usize, context_len: usize) -> Result<()> {
        let mut seen = BTreeSet::new();
        for (kind, ex) in self.iter_tagged() {
            if ex.tokens.is_empty() {
                return Err(Error::contract(format!("example {} has no tokens", ex.id)));
            }
            if ex.tokens.len() > context_len {
                return Err(Error::contract(format!(
                    "example {} has {} tokens, context_len is {context_len}",
                    ex.id,
                    ex.tokens.len()
                )));
            }
            if let Some(&t) = ex.tokens.iter().find(|&&t| t as usize >= vocab_size) {
                return Err(Error::contract(format!(
                    "example {} has token {t} >= vocab_size {vocab_size}",
                    ex.id
                )));
            }
            if !seen.insert(ex.id) {
                return Err(Error::contract(format!("duplicate example id {}", ex.id)));
            }
            if kind == SplitKind::Reference && ex.quality != QualityTag::Clean {
                return Err(Error::contract(format!("reference example {} is not clean", ex.id)));
            }
        }
        Ok(())
    }
}

/// Fractions of clean, noise and shuffled examples.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Mix {
    pub clean: f64,
    pub noise: f64,
    pub shuffled: f64,
}

impl Mix {
    pub fn new(clean: f64, noise: f64, shuffled: f64) -> Self {
        Self { clean, noise, shuffled }
    }

    pub fn validate(&self) -> Result<()> {
        let parts = [self.clean, self.noise, self.shuffled];
        if parts.iter().any(|p| !(*p >= 0.0) || !p.is_finite()) {
            return Err(Error::config("mixture fractions must be finite and non-negative"));
        }
        let total: f64 = parts.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::config(format!("mixture fractions sum to {total}, expected 1")));
        }
        Ok(())
    }

    fn fraction(&self, tag: QualityTag) -> f64 {
        match tag {
            QualityTag::Clean => self.clean,
            QualityTag::Noise => self.noise,
            QualityTag::Shuffled => self.shuffled,
        }
    }

    /// Exact per-tag counts for `n` examples (largest-remainder rounding).
    pub fn counts(&self, n: usize) -> [usize; 3] {
        let raw: Vec<f64> = QualityTag::ALL.iter().map(|&t| self.fraction(t) * n as f64).collect();
        let mut counts = [0usize; 3];
        for (c, r) in counts.iter_mut().zip(&raw) {
            *c = *r as usize;
        }
        let mut rest = n - counts.iter().sum::<usize>();
        let mut order: Vec<usize> = (0..3).collect();
        order.sort_by(|&a, &b| {
            let fa = raw[a] - counts[a] as f64;
            let fb = raw[b] - counts[b] as f64;
            fb.partial_cmp(&fa).unwrap_or(core::cmp::Ordering::Equal).then(a.cmp(&b))
        });
        for &i in order.iter().cycle() {
            if rest == 0 {
                break;
            }
            counts[i] += 1;
            rest -= 1;
        }
        counts
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorpusConfig {
    pub vocab_size: usize,
    pub min_len: usize,
    pub max_len: usize,
    pub train: usize,
    pub holdout: usize,
    pub reference: usize,
    pub mix: Mix,
    pub seed: u64,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            vocab_size: 256,
            min_len: 32,
            max_len: 64,
            train: 50_000,
            holdout: 4_000,
            reference: 1024,
            mix: Mix::new(0.3, 0.4, 0.3),
            seed: 0,
        }
    }
}

impl CorpusConfig {
    pub fn validate(&self) -> Result<()> {
        self.mix.validate()?;
        if self.train == 0 || self.holdout == 0 || self.reference == 0 {
            return Err(Error::config("every split needs at least one example"));
        }
        if self.vocab_size < 2 {
            return Err(Error::config("vocab_size must be at least 2"));
        }
        if self.min_len < 2 || self.min_len > self.max_len {
            return Err(Error::config("need 2 <= min_len <= max_len"));
        }
        Ok(())
    }
}

/// Successors per grammar state.
pub const SUCCESSORS: usize = 8;
/// Size of the per-token pool the successors of any state are drawn from.
pub const CANDIDATES: usize = 12;

/// Sparse order-2 Markov grammar. The successors of state `(a, b)` are a
/// subset of a candidate pool owned by `b`, weighted by rank as `1/(r+1)`.
#[derive(Debug, Clone)]
pub struct Grammar {
    vocab: usize,
    successors: Vec<u32>,
    candidates: Vec<u32>,
    cumulative: [f64; SUCCESSORS],
}

impl Grammar {
    pub fn new(vocab: usize, seed: u64) -> Self {
        let mut r = rng::stream(seed, rng::tags::GRAMMAR, 0);
        let pool = CANDIDATES.min(vocab);
        let succ = SUCCESSORS.min(pool);
        let all: Vec<u32> = (0..vocab as u32).collect();
        let mut candidates = Vec::with_capacity(vocab * pool);
        for _ in 0..vocab {
            let picked = all.choose_multiple(&mut r, pool);
            candidates.extend(picked.copied());
        }
        let mut successors = Vec::with_capacity(vocab * vocab * SUCCESSORS);
        for _a in 0..vocab {
            for b in 0..vocab {
                let cand = &candidates[b * pool..(b + 1) * pool];
                let mut chosen: Vec<u32> = cand.choose_multiple(&mut r, succ).copied().collect();
                chosen.resize(SUCCESSORS, chosen[0]);
                successors.extend(chosen);
            }
        }
        let mut cumulative = [0.0; SUCCESSORS];
        let mut acc = 0.0;
        for (i, c) in cumulative.iter_mut().enumerate() {
            if i < succ {
                acc += 1.0 / (i as f64 + 1.0);
            }
            *c = acc;
        }
        for c in cumulative.iter_mut() {
            *c /= acc;
        }
        Self {
            vocab,
            successors,
            candidates,
            cumulative,
        }
    }

    pub fn successors(&self, a: u32, b: u32) -> &[u32] {
        let i = (a as usize * self.vocab + b as usize) * SUCCESSORS;
        &self.successors[i..i + SUCCESSORS]
    }

    pub fn sample(&self, len: usize, r: &mut Rng) -> Vec<u32> {
        let mut out = Vec::with_capacity(len);
        let pool = CANDIDATES.min(self.vocab);
        let a = r.random_range(0..self.vocab as u32);
        out.push(a);
        if len > 1 {
            let cand = &self.candidates[a as usize * pool..(a as usize + 1) * pool];
            out.push(cand[r.random_range(0..pool)]);
        }
        while out.len() < len {
            let n = out.len();
            let succ = self.successors(out[n - 2], out[n - 1]);
            let u: f64 = r.random();
            let k = self.cumulative.iter().position(|&c| u < c).unwrap_or(SUCCESSORS - 1);
            out.push(succ[k]);
        }
        out
    }
}

fn sample_split(
    grammar: &Grammar,
    cfg: &CorpusConfig,
    n: usize,
    mix: Mix,
    first_id: u64,
    r: &mut Rng,
) -> Vec<Example> {
    let counts = mix.counts(n);
    let mut tags = Vec::with_capacity(n);
    for (tag, &c) in QualityTag::ALL.iter().zip(&counts) {
        tags.extend(core::iter::repeat_n(*tag, c));
    }
    tags.shuffle(r);
    tags.into_iter()
        .enumerate()
        .map(|(i, quality)| {
            let len = r.random_range(cfg.min_len..=cfg.max_len);
            let tokens = match quality {
                QualityTag::Clean => grammar.sample(len, r),
                QualityTag::Noise => (0..len).map(|_| r.random_range(0..cfg.vocab_size as u32)).collect(),
                QualityTag::Shuffled => {
                    let mut t = grammar.sample(len, r);
                    t.shuffle(r);
                    t
                }
            };
            Example {
                id: first_id + i as u64,
                tokens,
                quality,
            }
        })
        .collect()
}

/// Generates all three splits. Ids are contiguous: train pool first, then
/// hold-out, then reference.
pub fn generate(cfg: &CorpusConfig) -> Result<CorpusSplit> {
    cfg.validate()?;
    let grammar = Grammar::new(cfg.vocab_size, cfg.seed);
    let mut r_train = rng::stream(cfg.seed, rng::tags::CORPUS, 0);
    let mut r_hold = rng::stream(cfg.seed, rng::tags::CORPUS, 1);
    let mut r_ref = rng::stream(cfg.seed, rng::tags::CORPUS, 2);
    let train_pool = sample_split(&grammar, cfg, cfg.train, cfg.mix, 0, &mut r_train);
    let holdout = sample_split(&grammar, cfg, cfg.holdout, cfg.mix, cfg.train as u64, &mut r_hold);
    let reference = sample_split(
        &grammar,
        cfg,
        cfg.reference,
        Mix::new(1.0, 0.0, 0.0),
        (cfg.train + cfg.holdout) as u64,
        &mut r_ref,
    );
    Ok(CorpusSplit {
        train_pool,
        holdout,
        reference,
    })
}

/// Counts per quality tag, in [`QualityTag::ALL`] order.
pub fn tag_counts<'a>(examples: impl IntoIterator<Item = &'a Example>) -> [usize; 3] {
    let mut c = [0; 3];
    for e in examples {
        c[e.quality as usize] += 1;
    }
    c
}
