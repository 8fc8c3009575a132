//! Locally probed oracle influence.
//!
//! The influence of an example is the drop in reference loss produced by a
//! single optimizer step on that example alone, starting from the current
//! model and optimizer state:
//!
//! `influence(x) = L(D_r | M) − L(D_r | step(M, x))`
//!
//! Positive values mean training on `x` helps the reference set. Every probe
//! snapshots the model and optimizer, steps, measures and restores, so the
//! caller's state is bitwise unchanged afterwards.

use alloc::format;
use alloc::string::ToString;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::corpus::Example;
use crate::exec::Executor;
use crate::model::{LanguageModel, ModelState, NllSum};
use crate::optim::{adam_step, sgd_step, AdamState};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OracleRecord {
    pub example_id: u64,
    pub step: u64,
    pub influence: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProbeOptimizer {
    /// One Adam step from a copy of the live optimizer moments.
    AdamClone,
    /// One plain gradient step; used for first-order analytic checks.
    Sgd,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProbeLr {
    Fixed(f64),
    /// Whatever the pretraining schedule gives at the probe step.
    SchedulerCurrent,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbeConfig {
    pub optimizer: ProbeOptimizer,
    pub lr: ProbeLr,
    /// Micro-batch size used when evaluating the reference loss.
    pub reference_batch: usize,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            optimizer: ProbeOptimizer::AdamClone,
            lr: ProbeLr::SchedulerCurrent,
            reference_batch: 64,
        }
    }
}

impl ProbeConfig {
    pub fn resolve_lr(&self, scheduler_lr: f64) -> Result<f64> {
        let lr = match self.lr {
            ProbeLr::Fixed(v) => v,
            ProbeLr::SchedulerCurrent => scheduler_lr,
        };
        if !(lr >= 0.0) || !lr.is_finite() {
            return Err(Error::config(format!("probe learning rate {lr} must be finite and >= 0")));
        }
        Ok(lr)
    }
}

/// Per-token mean NLL over the whole reference set, accumulated exactly
/// across micro-batches.
pub fn reference_loss(lm: &LanguageModel, state: &ModelState, reference: &[Example], micro_batch: usize) -> Result<f64> {
    if reference.is_empty() {
        return Err(Error::contract("reference set is empty"));
    }
    let mut total = NllSum::default();
    for chunk in reference.chunks(micro_batch.max(1)) {
        let part = lm.nll(state, chunk)?;
        total.sum += part.sum;
        total.positions += part.positions;
    }
    Ok(total.mean())
}

/// Probing context for one model state: the pre-step reference loss is
/// computed once and shared by every probe.
pub struct Prober<'a> {
    lm: &'a LanguageModel,
    reference: &'a [Example],
    cfg: ProbeConfig,
    lr: f64,
    base_loss: f64,
}

impl<'a> Prober<'a> {
    pub fn new(
        lm: &'a LanguageModel,
        state: &ModelState,
        reference: &'a [Example],
        cfg: ProbeConfig,
        scheduler_lr: f64,
    ) -> Result<Self> {
        let lr = cfg.resolve_lr(scheduler_lr)?;
        let base_loss = reference_loss(lm, state, reference, cfg.reference_batch)?;
        Ok(Self {
            lm,
            reference,
            cfg,
            lr,
            base_loss,
        })
    }

    pub fn base_loss(&self) -> f64 {
        self.base_loss
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    /// Snapshot, step on `x`, measure, restore.
    pub fn probe(&self, state: &mut ModelState, adam: &mut AdamState, x: &Example) -> Result<OracleRecord> {
        if adam.len() != state.params.len() {
            return Err(Error::contract("optimizer moments do not match parameter layout"));
        }
        let model_snapshot = state.snapshot();
        let adam_snapshot = adam.clone_optimizer();
        let outcome = self.step_and_measure(state, adam, x);
        state.restore(&model_snapshot)?;
        *adam = adam_snapshot;
        let post = outcome.map_err(|e| Error::Probe {
            id: x.id,
            reason: e.to_string(),
        })?;
        if !post.is_finite() {
            return Err(Error::Probe {
                id: x.id,
                reason: format!("post-step reference loss is {post}"),
            });
        }
        Ok(OracleRecord {
            example_id: x.id,
            step: state.step,
            influence: self.base_loss - post,
        })
    }

    fn step_and_measure(&self, state: &mut ModelState, adam: &mut AdamState, x: &Example) -> Result<f64> {
        let g = self.lm.loss(state, core::slice::from_ref(x))?;
        match self.cfg.optimizer {
            ProbeOptimizer::AdamClone => adam_step(state, &g.grads, adam, self.lr)?,
            ProbeOptimizer::Sgd => sgd_step(state, &g.grads, self.lr)?,
        }
        reference_loss(self.lm, state, self.reference, self.cfg.reference_batch)
    }
}

/// One-off probe of a single example.
pub fn probe_influence(
    lm: &LanguageModel,
    state: &mut ModelState,
    adam: &mut AdamState,
    x: &Example,
    reference: &[Example],
    cfg: ProbeConfig,
    scheduler_lr: f64,
) -> Result<OracleRecord> {
    Prober::new(lm, state, reference, cfg, scheduler_lr)?.probe(state, adam, x)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeOutcome {
    /// Successful records, in input order.
    pub records: Vec<OracleRecord>,
    pub failures: Vec<Error>,
}

/// Probes every example from the same base state. Each probe runs on its own
/// copy of the model and optimizer, so results do not depend on order or on
/// the executor. Individual failures are collected; the call fails only when
/// every probe fails.
pub fn probe_many<E: Executor>(
    exec: &E,
    prober: &Prober<'_>,
    state: &ModelState,
    adam: &AdamState,
    examples: &[Example],
) -> Result<ProbeOutcome> {
    if examples.is_empty() {
        return Err(Error::contract("probe_many: no examples"));
    }
    let results = exec.map(examples, |x| {
        let mut s = state.clone();
        let mut a = adam.clone();
        prober.probe(&mut s, &mut a, x)
    });
    let mut records = Vec::with_capacity(results.len());
    let mut failures = Vec::new();
    for r in results {
        match r {
            Ok(rec) => records.push(rec),
            Err(e) => failures.push(e),
        }
    }
    if records.is_empty() {
        return Err(failures.swap_remove(0));
    }
    Ok(ProbeOutcome { records, failures })
}
