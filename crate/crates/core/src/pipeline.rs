//! Staged pretraining with model-aware data selection.
//!
//! Training runs for `total_steps` steps split into stages of
//! `update_interval` steps. Stage 0 trains on a uniformly sampled subset of
//! the pool. At the start of every later stage the selector of the chosen
//! mode picks a fresh subset of size `k`:
//!
//! * `mates`: probe oracle influences on a fresh slice of the hold-out split,
//!   refresh the influence model, score the pool and draw with Gumbel-Top-k;
//! * `random`: a new uniform subset;
//! * `static@s`: the influence model is fitted once on the checkpoint at the
//!   end of stage `s` and reused unchanged afterwards (stages up to `s` are
//!   random);
//! * `ngram`: n-gram proximity to the reference split.
//!
//! Reference loss is measured on an evaluation grid after a short decay phase
//! run on a throwaway copy of the model and optimizer.

use alloc::boxed::Box;
use alloc::format;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::corpus::{CorpusSplit, Example};
use crate::exec::Executor;
use crate::influence::{fit, predict_pool, FeatureVec, FitConfig, FitInit, Featurizer, Regressor};
use crate::model::{FlopsMode, LMConfig, LanguageModel, ModelState};
use crate::optim::{adam_step, wsd_lr, AdamState, WsdConfig};
use crate::oracle::{probe_many, reference_loss, OracleRecord, ProbeConfig, Prober};
use crate::rng::{self, derive, tags};
use crate::selection::{gumbel_top_k, random_select, NgramProximity, Scored, SelectionConfig, NGRAM_BUCKETS};
use crate::stats::spearman;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Mode {
    Mates,
    Random,
    Static { stage: usize },
    Ngram,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Mode::Mates => f.write_str("mates"),
            Mode::Random => f.write_str("random"),
            Mode::Static { stage } => write!(f, "static@{stage}"),
            Mode::Ngram => f.write_str("ngram"),
        }
    }
}

impl FromStr for Mode {
    type Err = Error;

    /// `mates`, `random`, `ngram`, `static` (stage 0) or `static@<s>`.
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mates" => Ok(Mode::Mates),
            "random" => Ok(Mode::Random),
            "ngram" => Ok(Mode::Ngram),
            "static" => Ok(Mode::Static { stage: 0 }),
            _ => {
                let stage = s
                    .strip_prefix("static@")
                    .and_then(|n| n.parse().ok())
                    .ok_or_else(|| Error::config(format!("unknown mode `{s}`")))?;
                Ok(Mode::Static { stage })
            }
        }
    }
}

/// Compute categories of the FLOPs ledger.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FlopCategory {
    ModelPretraining,
    OracleCollection,
    InfluenceTraining,
    InfluenceInference,
}

impl FlopCategory {
    pub const ALL: [FlopCategory; 4] = [
        FlopCategory::ModelPretraining,
        FlopCategory::OracleCollection,
        FlopCategory::InfluenceTraining,
        FlopCategory::InfluenceInference,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            FlopCategory::ModelPretraining => "model_pretraining",
            FlopCategory::OracleCollection => "oracle_collection",
            FlopCategory::InfluenceTraining => "influence_training",
            FlopCategory::InfluenceInference => "influence_inference",
        }
    }
}

impl FromStr for FlopCategory {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        FlopCategory::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| Error::contract(format!("unknown ledger category `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ledger {
    pub model_pretraining: u64,
    pub oracle_collection: u64,
    pub influence_training: u64,
    pub influence_inference: u64,
}

impl Ledger {
    fn slot(&mut self, c: FlopCategory) -> &mut u64 {
        match c {
            FlopCategory::ModelPretraining => &mut self.model_pretraining,
            FlopCategory::OracleCollection => &mut self.oracle_collection,
            FlopCategory::InfluenceTraining => &mut self.influence_training,
            FlopCategory::InfluenceInference => &mut self.influence_inference,
        }
    }

    pub fn get(&self, c: FlopCategory) -> u64 {
        match c {
            FlopCategory::ModelPretraining => self.model_pretraining,
            FlopCategory::OracleCollection => self.oracle_collection,
            FlopCategory::InfluenceTraining => self.influence_training,
            FlopCategory::InfluenceInference => self.influence_inference,
        }
    }

    pub fn add(&mut self, c: FlopCategory, flops: u64) -> Result<()> {
        let slot = self.slot(c);
        *slot = slot
            .checked_add(flops)
            .ok_or_else(|| Error::Numeric(format!("ledger overflow in {}", c.as_str())))?;
        Ok(())
    }

    pub fn total(&self) -> u64 {
        FlopCategory::ALL.iter().map(|&c| self.get(c)).sum()
    }

    /// Oracle collection plus influence-model training and inference, as a
    /// fraction of the total. Zero for an empty ledger.
    pub fn selection_share(&self) -> f64 {
        let total = self.total();
        if total == 0 {
            return 0.0;
        }
        (total - self.model_pretraining) as f64 / total as f64
    }
}

/// Adds `flops` to the named category of a report's ledger.
pub fn ledger_add(report: &mut RunReport, category: &str, flops: u64) -> Result<()> {
    report.ledger.add(category.parse()?, flops)
}

pub fn ledger_total(report: &RunReport) -> u64 {
    report.ledger.total()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    /// Architecture of the pretrained model. Its seed is replaced by `seed`.
    pub lm: LMConfig,
    /// T
    pub total_steps: u64,
    /// U
    pub update_interval: u64,
    pub batch_size: usize,
    /// Reference loss is recorded every this many steps.
    pub eval_interval: u64,
    /// Hold-out examples probed at the first influence-model fit.
    pub oracle_budget_first: usize,
    /// Hold-out examples probed at every later fit.
    pub oracle_budget: usize,
    /// Reference sequences used by probes; 0 means the whole reference split.
    /// Evaluation always uses the whole split.
    pub probe_reference_size: usize,
    pub selection: SelectionConfig,
    /// Main-run schedule. Evaluation decays from the current step with the
    /// same warmup, peak and decay length.
    pub wsd: WsdConfig,
    pub probe: ProbeConfig,
    pub fit: FitConfig,
    pub featurizer: Featurizer,
    pub mode: Mode,
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            lm: LMConfig::default(),
            total_steps: 3000,
            update_interval: 500,
            batch_size: 32,
            eval_interval: 100,
            oracle_budget_first: 800,
            oracle_budget: 200,
            probe_reference_size: 0,
            selection: SelectionConfig::default(),
            wsd: WsdConfig {
                warmup: 20,
                stable_end: 3000,
                decay: 12,
                max_lr: 1e-3,
            },
            probe: ProbeConfig::default(),
            fit: FitConfig::default(),
            featurizer: Featurizer::default(),
            mode: Mode::Mates,
            seed: 0,
        }
    }
}

/// Evaluation decay length for a run of `total_steps`: `max(2, T/250)`.
pub fn eval_decay_steps(total_steps: u64) -> u64 {
    (total_steps / 250).max(2)
}

impl PipelineConfig {
    pub fn stages(&self) -> usize {
        (self.total_steps / self.update_interval.max(1)) as usize
    }

    /// Size of the validation slice the influence-model fit holds out from a
    /// later-stage oracle batch. Static runs probe this many fresh examples
    /// per stage to track their frozen model.
    pub fn diagnostic_size(&self) -> usize {
        let n = self.oracle_budget;
        (libm::ceil(n as f64 * self.fit.validation_fraction) as usize).clamp(2, n.max(3) - 1)
    }

    /// Hold-out examples the configured mode will consume.
    pub fn holdout_demand(&self) -> usize {
        let n = self.stages();
        match self.mode {
            Mode::Mates if n >= 2 => self.oracle_budget_first + self.oracle_budget * (n - 2),
            Mode::Static { stage } if stage + 2 <= n => {
                self.oracle_budget_first + self.diagnostic_size() * (n - stage - 2)
            }
            _ => 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.lm.validate()?;
        self.wsd.validate()?;
        if self.update_interval == 0 || self.total_steps == 0 {
            return Err(Error::config("total_steps and update_interval must be positive"));
        }
        if self.update_interval > self.total_steps || self.total_steps % self.update_interval != 0 {
            return Err(Error::config(format!(
                "update_interval {} must divide total_steps {}",
                self.update_interval, self.total_steps
            )));
        }
        if self.eval_interval == 0 {
            return Err(Error::config("eval_interval must be positive"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be positive"));
        }
        if self.wsd.stable_end < self.total_steps {
            return Err(Error::config("the main schedule must not decay before total_steps"));
        }
        if !(self.selection.ratio > 0.0 && self.selection.ratio <= 1.0) {
            return Err(Error::config("selection ratio must lie in (0, 1]"));
        }
        if !(self.selection.tau >= 0.0) {
            return Err(Error::config("temperature must be >= 0"));
        }
        if let Mode::Static { stage } = self.mode {
            if stage + 2 > self.stages() {
                return Err(Error::config(format!(
                    "static@{stage} needs at least {} stages, run has {}",
                    stage + 2,
                    self.stages()
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalPoint {
    pub step: u64,
    pub ref_loss: f64,
    /// Ledger total when the point was recorded.
    pub flops: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageLog {
    pub stage: usize,
    pub step: u64,
    /// Selected ids in selection order. Scores are the selector's weights,
    /// zero for uniform selection.
    pub selected: Vec<Scored>,
    /// Validation Spearman of the influence model used at this stage, if any.
    pub spearman: Option<f64>,
    pub oracle_records: usize,
    pub probe_failures: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub mode: Mode,
    pub seed: u64,
    pub config: PipelineConfig,
    pub evals: Vec<EvalPoint>,
    pub stages: Vec<StageLog>,
    pub ledger: Ledger,
    /// Main-model steps taken.
    pub steps: u64,
}

impl RunReport {
    fn empty(cfg: &PipelineConfig) -> Self {
        Self {
            mode: cfg.mode,
            seed: cfg.seed,
            config: cfg.clone(),
            evals: Vec::new(),
            stages: Vec::new(),
            ledger: Ledger::default(),
            steps: 0,
        }
    }

    pub fn final_loss(&self) -> Option<f64> {
        self.evals.last().map(|e| e.ref_loss)
    }
}

/// A failed run with everything completed before the failure.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("stage {stage} failed: {error}")]
pub struct RunError {
    pub stage: usize,
    pub error: Error,
    pub partial: Box<RunReport>,
}

/// Draws batches without replacement from a selection, reshuffling with a
/// fresh stream whenever the selection is exhausted.
struct BatchSampler {
    order: Vec<usize>,
    pos: usize,
    epoch: u64,
    seed: u64,
}

impl BatchSampler {
    fn new(indices: Vec<usize>, seed: u64) -> Self {
        let mut s = Self {
            order: indices,
            pos: 0,
            epoch: 0,
            seed,
        };
        s.shuffle();
        s
    }

    fn shuffle(&mut self) {
        let mut r = rng::stream(self.seed, tags::BATCHES, self.epoch);
        self.order.shuffle(&mut r);
        self.pos = 0;
    }

    fn next_batch(&mut self, size: usize) -> Vec<usize> {
        let mut out = Vec::with_capacity(size);
        while out.len() < size {
            if self.pos == self.order.len() {
                self.epoch += 1;
                self.shuffle();
            }
            let take = (size - out.len()).min(self.order.len() - self.pos);
            out.extend_from_slice(&self.order[self.pos..self.pos + take]);
            self.pos += take;
        }
        out
    }
}

fn batch_tokens(pool: &[Example], idx: &[usize]) -> u64 {
    idx.iter().map(|&i| pool[i].tokens.len() as u64).sum()
}

/// Everything fixed for the duration of one run.
struct Run<'a, E: Executor> {
    exec: &'a E,
    cfg: &'a PipelineConfig,
    corpus: &'a CorpusSplit,
    lm: LanguageModel,
    k: usize,
    pool_ids: Vec<u64>,
    pool_index: alloc::collections::BTreeMap<u64, usize>,
    probe_reference: Vec<Example>,
    probe_reference_tokens: u64,
    holdout_order: Vec<usize>,
    holdout_cursor: usize,
    pool_features: Option<Vec<FeatureVec>>,
}

struct Trainer {
    state: ModelState,
    adam: AdamState,
}

struct Probed {
    records: Vec<OracleRecord>,
    features: Vec<FeatureVec>,
    failures: usize,
}

impl<'a, E: Executor> Run<'a, E> {
    fn new(exec: &'a E, corpus: &'a CorpusSplit, cfg: &'a PipelineConfig) -> Result<Self> {
        cfg.validate()?;
        let lm = LanguageModel::new(LMConfig { seed: cfg.seed, ..cfg.lm })?;
        corpus.validate(cfg.lm.vocab_size, cfg.lm.context_len)?;
        if cfg.holdout_demand() > corpus.holdout.len() {
            return Err(Error::config(format!(
                "mode {} needs {} hold-out examples, corpus has {}",
                cfg.mode,
                cfg.holdout_demand(),
                corpus.holdout.len()
            )));
        }
        let pool_ids: Vec<u64> = corpus.train_pool.iter().map(|e| e.id).collect();
        let pool_index = pool_ids.iter().enumerate().map(|(i, &id)| (id, i)).collect();
        let probe_reference: Vec<Example> =
            if cfg.probe_reference_size == 0 || cfg.probe_reference_size >= corpus.reference.len() {
                corpus.reference.clone()
            } else {
                let mut r = rng::stream(cfg.seed, tags::PROBE_REF, 0);
                let mut idx = rand::seq::index::sample(&mut r, corpus.reference.len(), cfg.probe_reference_size).into_vec();
                idx.sort_unstable();
                idx.into_iter().map(|i| corpus.reference[i].clone()).collect()
            };
        let probe_reference_tokens = probe_reference.iter().map(|e| e.tokens.len() as u64).sum();
        let mut holdout_order: Vec<usize> = (0..corpus.holdout.len()).collect();
        holdout_order.shuffle(&mut rng::stream(cfg.seed, tags::HOLDOUT, 0));
        Ok(Self {
            exec,
            cfg,
            corpus,
            lm,
            k: cfg.selection.k_for(corpus.train_pool.len()),
            pool_ids,
            pool_index,
            probe_reference,
            probe_reference_tokens,
            holdout_order,
            holdout_cursor: 0,
            pool_features: None,
        })
    }

    fn take_holdout(&mut self, n: usize) -> Result<Vec<Example>> {
        let end = self.holdout_cursor + n;
        if end > self.holdout_order.len() {
            return Err(Error::contract("hold-out split exhausted"));
        }
        let out = self.holdout_order[self.holdout_cursor..end]
            .iter()
            .map(|&i| self.corpus.holdout[i].clone())
            .collect();
        self.holdout_cursor = end;
        Ok(out)
    }

    fn features(&mut self) -> &[FeatureVec] {
        if self.pool_features.is_none() {
            let f = &self.cfg.featurizer;
            self.pool_features = Some(self.exec.map(&self.corpus.train_pool, |e| f.featurize(&e.tokens)));
        }
        self.pool_features.as_deref().unwrap_or(&[])
    }

    fn uniform(&self, seed: u64) -> Result<Vec<Scored>> {
        Ok(random_select(&self.pool_ids, self.k, seed)?
            .into_iter()
            .map(|id| Scored { id, score: 0.0 })
            .collect())
    }

    /// Probes `examples` from the current state and checks that probing left
    /// the live model and optimizer untouched.
    fn probe(&self, tr: &Trainer, examples: &[Example], ledger: Option<&mut Ledger>) -> Result<Probed> {
        let step = tr.state.step;
        let lr = wsd_lr(step, &self.cfg.wsd)?;
        let before = (tr.state.snapshot(), tr.adam.clone_optimizer());
        let prober = Prober::new(&self.lm, &tr.state, &self.probe_reference, self.cfg.probe, lr)?;
        let outcome = probe_many(self.exec, &prober, &tr.state, &tr.adam, examples)?;
        if !tr.state.bitwise_eq(&before.0) || !tr.adam.bitwise_eq(&before.1) {
            return Err(Error::contract("probing modified the live model or optimizer"));
        }
        if let Some(ledger) = ledger {
            let n = self.lm.param_count();
            let train = crate::model::flops_per_token(n, FlopsMode::Train);
            let infer = crate::model::flops_per_token(n, FlopsMode::Infer);
            let ref_cost = infer * self.probe_reference_tokens;
            let mut flops = ref_cost;
            for x in examples {
                flops += train * x.tokens.len() as u64 + ref_cost;
            }
            ledger.add(FlopCategory::OracleCollection, flops)?;
        }
        let by_id: alloc::collections::BTreeMap<u64, &Example> = examples.iter().map(|e| (e.id, e)).collect();
        let features = outcome
            .records
            .iter()
            .map(|r| self.cfg.featurizer.featurize(&by_id[&r.example_id].tokens))
            .collect();
        Ok(Probed {
            records: outcome.records,
            features,
            failures: outcome.failures.len(),
        })
    }

    fn fit(&self, previous: Option<&Regressor>, probed: &Probed, stage: usize, ledger: &mut Ledger) -> Result<(Regressor, Option<f64>)> {
        let targets: Vec<f64> = probed.records.iter().map(|r| r.influence).collect();
        let cfg = FitConfig {
            init: if previous.is_some() { self.cfg.fit.init } else { FitInit::Fresh },
            seed: derive(self.cfg.seed, tags::FIT, stage as u64),
            ..self.cfg.fit
        };
        let (reg, report) = fit(previous, &probed.features, &targets, self.cfg.featurizer.dim, &cfg)?;
        ledger.add(FlopCategory::InfluenceTraining, report.flops)?;
        Ok((reg, report.validation_spearman))
    }

    fn score_and_select(&mut self, reg: &Regressor, stage: usize, ledger: &mut Ledger) -> Result<Vec<Scored>> {
        let exec = self.exec;
        let (scores, flops) = predict_pool(exec, reg, self.features());
        ledger.add(FlopCategory::InfluenceInference, flops)?;
        let scored: Vec<Scored> = self
            .pool_ids
            .iter()
            .zip(scores)
            .map(|(&id, score)| Scored { id, score })
            .collect();
        gumbel_top_k(&scored, self.k, self.cfg.selection.tau, self.select_seed(stage))
    }

    fn select_seed(&self, stage: usize) -> u64 {
        derive(self.cfg.seed ^ self.cfg.selection.seed, tags::SELECT, stage as u64)
    }

    fn selection_indices(&self, selected: &[Scored]) -> Result<Vec<usize>> {
        selected
            .iter()
            .map(|s| {
                self.pool_index
                    .get(&s.id)
                    .copied()
                    .ok_or_else(|| Error::contract(format!("selected id {} is not in the training pool", s.id)))
            })
            .collect()
    }

    /// Decay from the current step on a copy, measure, discard.
    fn evaluate(&self, tr: &Trainer, selection: &[usize]) -> Result<f64> {
        let t = tr.state.step;
        let decay_cfg = self.cfg.wsd.decaying_from(t);
        let mut state = tr.state.clone();
        let mut adam = tr.adam.clone_optimizer();
        let mut sampler = BatchSampler::new(selection.to_vec(), derive(self.cfg.seed, tags::EVAL, t));
        for i in 0..self.cfg.wsd.decay {
            let lr = wsd_lr(t + i, &decay_cfg)?;
            let idx = sampler.next_batch(self.cfg.batch_size);
            let batch: Vec<&[u32]> = idx.iter().map(|&j| self.corpus.train_pool[j].tokens.as_slice()).collect();
            let g = self.lm.loss(&state, &batch)?;
            adam_step(&mut state, &g.grads, &mut adam, lr)?;
        }
        reference_loss(&self.lm, &state, &self.corpus.reference, self.cfg.probe.reference_batch)
    }
}

/// Runs the configured mode. On failure the error carries the report of all
/// stages completed so far.
pub fn run<E: Executor>(exec: &E, corpus: &CorpusSplit, cfg: &PipelineConfig) -> core::result::Result<RunReport, RunError> {
    run_full(exec, corpus, cfg).map(|out| out.report)
}

/// A finished run together with the final model and optimizer.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub report: RunReport,
    pub lm: LanguageModel,
    pub state: ModelState,
    pub adam: AdamState,
}

/// Like [`run`], also returning the trained model.
pub fn run_full<E: Executor>(exec: &E, corpus: &CorpusSplit, cfg: &PipelineConfig) -> core::result::Result<RunOutput, RunError> {
    let mut report = RunReport::empty(cfg);
    let mut stage = 0;
    match run_inner(exec, corpus, cfg, &mut report, &mut stage) {
        Ok((lm, tr)) => Ok(RunOutput {
            report,
            lm,
            state: tr.state,
            adam: tr.adam,
        }),
        Err(error) => {
            // keep only fully completed stages and the evaluations inside them
            report.stages.truncate(stage);
            let done = stage as u64 * cfg.update_interval;
            report.evals.retain(|e| e.step <= done);
            Err(RunError {
                stage,
                error,
                partial: Box::new(report),
            })
        }
    }
}

/// The model-aware selection loop.
pub fn run_mates<E: Executor>(exec: &E, corpus: &CorpusSplit, cfg: &PipelineConfig) -> core::result::Result<RunReport, RunError> {
    run(exec, corpus, &PipelineConfig { mode: Mode::Mates, ..cfg.clone() })
}

/// A baseline run; `cfg.mode` must not be `Mates`.
pub fn run_baseline<E: Executor>(exec: &E, corpus: &CorpusSplit, cfg: &PipelineConfig) -> core::result::Result<RunReport, RunError> {
    if cfg.mode == Mode::Mates {
        return Err(RunError {
            stage: 0,
            error: Error::config("run_baseline needs a baseline mode"),
            partial: Box::new(RunReport::empty(cfg)),
        });
    }
    run(exec, corpus, cfg)
}

fn run_inner<E: Executor>(
    exec: &E,
    corpus: &CorpusSplit,
    cfg: &PipelineConfig,
    report: &mut RunReport,
    stage_out: &mut usize,
) -> Result<(LanguageModel, Trainer)> {
    let mut run = Run::new(exec, corpus, cfg)?;
    let mut tr = Trainer {
        state: run.lm.init(),
        adam: AdamState::new(run.lm.param_count()),
    };
    let train_flops = run.lm.flops_per_token(FlopsMode::Train);
    let ngram = match cfg.mode {
        Mode::Ngram => Some(NgramProximity::fit(&corpus.train_pool, &corpus.reference, NGRAM_BUCKETS)),
        _ => None,
    };
    let mut theta: Option<Regressor> = None;

    for stage in 0..cfg.stages() {
        *stage_out = stage;
        let t0 = stage as u64 * cfg.update_interval;
        debug_assert_eq!(tr.state.step, t0);
        let mut log = StageLog {
            stage,
            step: t0,
            selected: Vec::new(),
            spearman: None,
            oracle_records: 0,
            probe_failures: 0,
        };

        let selected = match (cfg.mode, stage) {
            (Mode::Ngram, _) => {
                let weights = ngram.as_ref().map(|m| m.weights(&corpus.train_pool)).unwrap_or_default();
                gumbel_top_k(&weights, run.k, 1.0, run.select_seed(stage))?
            }
            (_, 0) => run.uniform(derive(cfg.seed, tags::WARMUP, 0))?,
            (Mode::Random, s) => run.uniform(derive(cfg.seed, tags::WARMUP, s as u64))?,
            (Mode::Mates, s) => {
                let budget = if theta.is_none() { cfg.oracle_budget_first } else { cfg.oracle_budget };
                let examples = run.take_holdout(budget)?;
                let probed = run.probe(&tr, &examples, Some(&mut report.ledger))?;
                let (reg, rho) = run.fit(theta.as_ref(), &probed, s, &mut report.ledger)?;
                log.spearman = rho;
                log.oracle_records = probed.records.len();
                log.probe_failures = probed.failures;
                let sel = run.score_and_select(&reg, s, &mut report.ledger)?;
                theta = Some(reg);
                sel
            }
            (Mode::Static { stage: fit_at }, s) if s <= fit_at => run.uniform(derive(cfg.seed, tags::WARMUP, s as u64))?,
            (Mode::Static { .. }, s) => {
                if theta.is_none() {
                    let examples = run.take_holdout(cfg.oracle_budget_first)?;
                    let probed = run.probe(&tr, &examples, Some(&mut report.ledger))?;
                    let (reg, rho) = run.fit(None, &probed, s, &mut report.ledger)?;
                    log.spearman = rho;
                    log.oracle_records = probed.records.len();
                    log.probe_failures = probed.failures;
                    theta = Some(reg);
                } else if let Some(reg) = theta.as_ref() {
                    // diagnostic only: how well the frozen model tracks the
                    // current oracle; not charged to the ledger
                    let examples = run.take_holdout(cfg.diagnostic_size())?;
                    let probed = run.probe(&tr, &examples, None)?;
                    let preds: Vec<f64> = probed.features.iter().map(|f| reg.predict(f)).collect();
                    let actual: Vec<f64> = probed.records.iter().map(|r| r.influence).collect();
                    log.spearman = spearman(&preds, &actual).ok();
                    log.oracle_records = probed.records.len();
                    log.probe_failures = probed.failures;
                }
                let reg = theta.clone().ok_or_else(|| Error::contract("static influence model missing"))?;
                run.score_and_select(&reg, s, &mut report.ledger)?
            }
        };

        let indices = run.selection_indices(&selected)?;
        log.selected = selected;
        let mut sampler = BatchSampler::new(indices.clone(), derive(cfg.seed, tags::BATCHES, stage as u64));
        for _ in 0..cfg.update_interval {
            let t = tr.state.step;
            let idx = sampler.next_batch(cfg.batch_size);
            let batch: Vec<&[u32]> = idx.iter().map(|&i| corpus.train_pool[i].tokens.as_slice()).collect();
            let g = run.lm.loss(&tr.state, &batch)?;
            adam_step(&mut tr.state, &g.grads, &mut tr.adam, wsd_lr(t, &cfg.wsd)?)?;
            tr.state.step += 1;
            report.steps += 1;
            report.ledger.add(FlopCategory::ModelPretraining, train_flops * batch_tokens(&corpus.train_pool, &idx))?;
            if tr.state.step % cfg.eval_interval == 0 {
                let ref_loss = run.evaluate(&tr, &indices)?;
                report.evals.push(EvalPoint {
                    step: tr.state.step,
                    ref_loss,
                    flops: report.ledger.total(),
                });
            }
        }
        report.stages.push(log);
    }
    *stage_out = cfg.stages();
    Ok((run.lm, tr))
}
