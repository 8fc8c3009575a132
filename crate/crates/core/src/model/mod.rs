//! Pretraining language models.
//!
//! Two architectures share one parameter layout mechanism and one loss
//! contract: a bigram model whose parameters are a `V×V` logit table, and a
//! pre-norm decoder-only transformer. Loss is the mean next-token negative
//! log-likelihood over every predicted position in the batch (per-token, not
//! per-sequence, averaging).

mod bigram;
mod layout;
mod transformer;

use alloc::format;
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::numerics::{Tape, Var};
use crate::{math, Error, Result};

pub use layout::{InitKind, Layout, Segment};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Arch {
    Bigram,
    Transformer,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LMConfig {
    pub vocab_size: usize,
    pub context_len: usize,
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub arch: Arch,
    pub seed: u64,
}

impl Default for LMConfig {
    fn default() -> Self {
        Self {
            vocab_size: 256,
            context_len: 64,
            d_model: 64,
            n_layers: 2,
            n_heads: 4,
            arch: Arch::Transformer,
            seed: 0,
        }
    }
}

impl LMConfig {
    pub fn bigram(vocab_size: usize, context_len: usize, seed: u64) -> Self {
        Self {
            vocab_size,
            context_len,
            d_model: 1,
            n_layers: 0,
            n_heads: 1,
            arch: Arch::Bigram,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.vocab_size < 2 {
            return Err(Error::config("vocab_size must be at least 2"));
        }
        if self.context_len < 2 {
            return Err(Error::config("context_len must be at least 2"));
        }
        if self.arch == Arch::Transformer {
            if self.d_model == 0 || self.n_heads == 0 || self.d_model % self.n_heads != 0 {
                return Err(Error::config(format!(
                    "d_model {} not divisible by n_heads {}",
                    self.d_model, self.n_heads
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FlopsMode {
    Train,
    Infer,
}

/// Parameters plus the pretraining step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelState {
    pub params: Vec<f64>,
    pub step: u64,
    layout: Arc<Layout>,
}

impl ModelState {
    pub fn new(layout: Arc<Layout>, params: Vec<f64>, step: u64) -> Result<Self> {
        if params.len() != layout.total() {
            return Err(Error::contract(format!(
                "parameter vector has {} values, layout expects {}",
                params.len(),
                layout.total()
            )));
        }
        Ok(Self { params, step, layout })
    }

    pub fn layout(&self) -> &Arc<Layout> {
        &self.layout
    }

    pub fn snapshot(&self) -> ModelState {
        self.clone()
    }

    /// Overwrites `self` with `snapshot`. Fails when the layouts differ.
    pub fn restore(&mut self, snapshot: &ModelState) -> Result<()> {
        if !Arc::ptr_eq(&self.layout, &snapshot.layout) && self.layout != snapshot.layout {
            return Err(Error::contract("restore: parameter layouts differ"));
        }
        self.params.copy_from_slice(&snapshot.params);
        self.step = snapshot.step;
        Ok(())
    }

    /// Bitwise equality of parameters, step and layout.
    pub fn bitwise_eq(&self, other: &ModelState) -> bool {
        self.step == other.step
            && *self.layout == *other.layout
            && self.params.len() == other.params.len()
            && self
                .params
                .iter()
                .zip(&other.params)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

/// Loss value with gradients over the flat parameter vector.
#[derive(Debug, Clone)]
pub struct LossGrad {
    pub loss: f64,
    pub positions: usize,
    pub grads: Vec<f64>,
}

/// Sum of per-position NLL and the number of predicted positions.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct NllSum {
    pub sum: f64,
    pub positions: usize,
}

impl NllSum {
    pub fn mean(&self) -> f64 {
        self.sum / self.positions as f64
    }
}

pub(crate) struct Forward {
    tape: Tape,
    logits: Var,
    targets: Vec<usize>,
    params: Vec<Var>,
}

/// A validated architecture bound to its parameter layout.
#[derive(Debug, Clone)]
pub struct LanguageModel {
    config: LMConfig,
    layout: Arc<Layout>,
}

impl LanguageModel {
    pub fn new(config: LMConfig) -> Result<Self> {
        config.validate()?;
        let layout = match config.arch {
            Arch::Bigram => bigram::layout(&config),
            Arch::Transformer => transformer::layout(&config),
        };
        Ok(Self {
            config,
            layout: Arc::new(layout),
        })
    }

    pub fn config(&self) -> &LMConfig {
        &self.config
    }

    pub fn layout(&self) -> &Arc<Layout> {
        &self.layout
    }

    pub fn param_count(&self) -> usize {
        self.layout.total()
    }

    /// Deterministic initialization from `config.seed`: weight matrices and
    /// embeddings from N(0, 0.02²), norm gains 1, biases 0.
    pub fn init(&self) -> ModelState {
        let params = self.layout.initialize(self.config.seed);
        ModelState {
            params,
            step: 0,
            layout: self.layout.clone(),
        }
    }

    /// 6N per trained token, 2N per inferred token.
    pub fn flops_per_token(&self, mode: FlopsMode) -> u64 {
        flops_per_token(self.param_count(), mode)
    }

    fn check_state(&self, state: &ModelState) -> Result<()> {
        if *state.layout != *self.layout {
            return Err(Error::contract("model state layout does not match model"));
        }
        Ok(())
    }

    fn check_batch<S: AsRef<[u32]>>(&self, batch: &[S]) -> Result<()> {
        if batch.is_empty() {
            return Err(Error::contract("empty batch"));
        }
        for seq in batch {
            let seq = seq.as_ref();
            if seq.is_empty() {
                return Err(Error::contract("empty sequence in batch"));
            }
            if seq.len() > self.config.context_len {
                return Err(Error::contract(format!(
                    "sequence length {} exceeds context_len {}",
                    seq.len(),
                    self.config.context_len
                )));
            }
            if let Some(&t) = seq.iter().find(|&&t| t as usize >= self.config.vocab_size) {
                return Err(Error::Index {
                    index: t as usize,
                    bound: self.config.vocab_size,
                });
            }
        }
        if batch.iter().all(|s| s.as_ref().len() < 2) {
            return Err(Error::contract("batch has no predicted positions"));
        }
        Ok(())
    }

    fn forward<S: AsRef<[u32]>>(&self, params: &[f64], batch: &[S]) -> Result<Forward> {
        self.check_batch(batch)?;
        match self.config.arch {
            Arch::Bigram => bigram::forward(&self.layout, params, batch),
            Arch::Transformer => transformer::forward(&self.config, &self.layout, params, batch),
        }
    }

    /// Mean next-token NLL over the batch and its gradient.
    pub fn loss<S: AsRef<[u32]>>(&self, state: &ModelState, batch: &[S]) -> Result<LossGrad> {
        self.check_state(state)?;
        let mut fwd = self.forward(&state.params, batch)?;
        let loss = fwd.tape.softmax_cross_entropy(fwd.logits, &fwd.targets)?;
        let grads = fwd.tape.backward(loss)?;
        let mut flat = vec![0.0; self.layout.total()];
        for (seg, var) in self.layout.segments().iter().zip(&fwd.params) {
            grads.copy_into(*var, &mut flat[seg.range()]);
        }
        Ok(LossGrad {
            loss: fwd.tape.value(loss).item(),
            positions: fwd.targets.len(),
            grads: flat,
        })
    }

    /// Forward-only NLL sum, suitable for exact weighted means across
    /// micro-batches.
    pub fn nll<S: AsRef<[u32]>>(&self, state: &ModelState, batch: &[S]) -> Result<NllSum> {
        self.check_state(state)?;
        let per = self.position_nll_inner(&state.params, batch)?;
        Ok(NllSum {
            sum: per.iter().sum(),
            positions: per.len(),
        })
    }

    /// NLL of each predicted position, in batch order.
    pub fn position_nll<S: AsRef<[u32]>>(&self, state: &ModelState, batch: &[S]) -> Result<Vec<f64>> {
        self.check_state(state)?;
        self.position_nll_inner(&state.params, batch)
    }

    fn position_nll_inner<S: AsRef<[u32]>>(&self, params: &[f64], batch: &[S]) -> Result<Vec<f64>> {
        let fwd = self.forward(params, batch)?;
        let logits = fwd.tape.value(fwd.logits);
        let v = logits.shape()[1];
        let out = logits
            .data()
            .chunks_exact(v)
            .zip(&fwd.targets)
            .map(|(row, &t)| {
                let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let z: f64 = row.iter().map(|x| math::exp(x - max)).sum();
                math::ln(z) - (row[t] - max)
            })
            .collect();
        Ok(out)
    }
}

pub fn flops_per_token(param_count: usize, mode: FlopsMode) -> u64 {
    let n = param_count as u64;
    match mode {
        FlopsMode::Train => 6 * n,
        FlopsMode::Infer => 2 * n,
    }
}

/// Closed-form gradient of the bigram loss: for each observed bigram `(a, b)`
/// row `a` receives `softmax(W[a]) - onehot(b)`, all divided by the number of
/// predicted positions. Independent of the tape.
pub fn bigram_closed_form_grad<S: AsRef<[u32]>>(vocab: usize, table: &[f64], batch: &[S]) -> Vec<f64> {
    let mut grad = vec![0.0; vocab * vocab];
    let mut counts = vec![0usize; vocab * vocab];
    let mut positions = 0usize;
    for seq in batch {
        for w in seq.as_ref().windows(2) {
            counts[w[0] as usize * vocab + w[1] as usize] += 1;
            positions += 1;
        }
    }
    let mut probs = vec![0.0; vocab];
    for a in 0..vocab {
        let row_total: usize = counts[a * vocab..(a + 1) * vocab].iter().sum();
        if row_total == 0 {
            continue;
        }
        let row = &table[a * vocab..(a + 1) * vocab];
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0;
        for (p, &x) in probs.iter_mut().zip(row) {
            *p = math::exp(x - max);
            z += *p;
        }
        for b in 0..vocab {
            let c = counts[a * vocab + b] as f64;
            grad[a * vocab + b] = (row_total as f64 * probs[b] / z - c) / positions as f64;
        }
    }
    grad
}
