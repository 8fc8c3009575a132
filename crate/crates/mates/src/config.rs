//! Flat `key = value` experiment configuration.
//!
//! Blank lines and lines starting with `#` are ignored. Unknown keys,
//! repeated keys and unparsable values are errors carrying the line number.
//! Keys not given keep the values of the chosen preset. `seed` seeds both the
//! run and the corpus unless `corpus_seed` is set; the `MATES_SEED`
//! environment variable overrides `seed`.
//!
//! | key | meaning |
//! |---|---|
//! | `preset` | `desk` (default) or `full` |
//! | `seed`, `corpus_seed` | master seeds |
//! | `mode` | `mates`, `random`, `ngram`, `static` or `static@<s>` |
//! | `total_steps`, `update_interval`, `batch_size`, `eval_interval` | schedule |
//! | `oracle_budget_first`, `oracle_budget`, `probe_reference_size` | probing |
//! | `selection_ratio`, `tau`, `selection_seed` | selection |
//! | `warmup`, `decay`, `max_lr` | WSD schedule; the plateau always lasts to `total_steps` |
//! | `arch`, `vocab_size`, `context_len`, `d_model`, `n_layers`, `n_heads` | model |
//! | `probe_optimizer` (`adam_clone`, `sgd`), `probe_lr` (`scheduler` or a rate), `reference_batch` | probe |
//! | `fit_epochs`, `fit_batch`, `fit_lr`, `validation_fraction`, `fit_init` (`fresh`, `continue`), `head` (`linear`, `mlp:<H>`) | influence model |
//! | `feature_dim`, `feature_order`, `feature_chunk_len`, `feature_seed` | featurizer |
//! | `train_size`, `holdout_size`, `reference_size`, `min_len`, `max_len`, `mix_clean`, `mix_noise`, `mix_shuffled` | corpus |

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use mates_core::corpus::CorpusConfig;
use mates_core::influence::{FitInit, Head};
use mates_core::model::{Arch, LMConfig};
use mates_core::oracle::{ProbeLr, ProbeOptimizer};
use mates_core::pipeline::{eval_decay_steps, PipelineConfig};

use crate::{Error, Result};

pub const SEED_ENV: &str = "MATES_SEED";

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub corpus: CorpusConfig,
    pub pipeline: PipelineConfig,
}

impl ExperimentConfig {
    /// Model and corpus sizes of the reference design: 64-wide transformer,
    /// 64-token context, 256-token vocabulary.
    pub fn full() -> Self {
        let pipeline = PipelineConfig::default();
        Self {
            corpus: CorpusConfig {
                vocab_size: pipeline.lm.vocab_size,
                ..CorpusConfig::default()
            },
            pipeline,
        }
    }

    /// Sizes that finish a 3000-step run in minutes on one core: 16-wide
    /// transformer, 32-token context, 64-token vocabulary, probes scored on
    /// 128 reference sequences.
    pub fn desk() -> Self {
        let lm = LMConfig {
            vocab_size: 64,
            context_len: 32,
            d_model: 16,
            n_layers: 2,
            n_heads: 4,
            arch: Arch::Transformer,
            seed: 0,
        };
        Self {
            corpus: CorpusConfig {
                vocab_size: 64,
                min_len: 16,
                max_len: 32,
                ..CorpusConfig::default()
            },
            pipeline: PipelineConfig {
                lm,
                oracle_budget_first: 600,
                oracle_budget: 300,
                probe_reference_size: 128,
                ..PipelineConfig::default()
            },
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.pipeline.seed = seed;
        self.corpus.seed = seed;
        self
    }

    /// Parses configuration text. `seed_override` replaces the `seed` key.
    pub fn parse(text: &str, seed_override: Option<&str>) -> Result<Self> {
        parse_inner(text, seed_override, Path::new("<config>"))
    }

    /// Reads a config file, applying `MATES_SEED` when set.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(Error::io(path))?;
        let env = std::env::var(SEED_ENV).ok();
        parse_inner(&text, env.as_deref(), path)
    }

    /// The preset alone, with `MATES_SEED` applied when set.
    pub fn from_env(preset: &str) -> Result<Self> {
        let env = std::env::var(SEED_ENV).ok();
        parse_inner(&format!("preset = {preset}\n"), env.as_deref(), Path::new("<env>"))
    }

    /// Text that parses back to this configuration.
    pub fn render(&self) -> String {
        let p = &self.pipeline;
        let c = &self.corpus;
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        kv("seed", p.seed.to_string());
        kv("corpus_seed", c.seed.to_string());
        kv("mode", p.mode.to_string());
        kv("total_steps", p.total_steps.to_string());
        kv("update_interval", p.update_interval.to_string());
        kv("batch_size", p.batch_size.to_string());
        kv("eval_interval", p.eval_interval.to_string());
        kv("oracle_budget_first", p.oracle_budget_first.to_string());
        kv("oracle_budget", p.oracle_budget.to_string());
        kv("probe_reference_size", p.probe_reference_size.to_string());
        kv("selection_ratio", p.selection.ratio.to_string());
        kv("tau", p.selection.tau.to_string());
        kv("selection_seed", p.selection.seed.to_string());
        kv("warmup", p.wsd.warmup.to_string());
        kv("decay", p.wsd.decay.to_string());
        kv("max_lr", p.wsd.max_lr.to_string());
        kv(
            "arch",
            match p.lm.arch {
                Arch::Bigram => "bigram",
                Arch::Transformer => "transformer",
            }
            .into(),
        );
        kv("vocab_size", p.lm.vocab_size.to_string());
        kv("context_len", p.lm.context_len.to_string());
        kv("d_model", p.lm.d_model.to_string());
        kv("n_layers", p.lm.n_layers.to_string());
        kv("n_heads", p.lm.n_heads.to_string());
        kv(
            "probe_optimizer",
            match p.probe.optimizer {
                ProbeOptimizer::AdamClone => "adam_clone",
                ProbeOptimizer::Sgd => "sgd",
            }
            .into(),
        );
        kv(
            "probe_lr",
            match p.probe.lr {
                ProbeLr::SchedulerCurrent => "scheduler".into(),
                ProbeLr::Fixed(v) => v.to_string(),
            },
        );
        kv("reference_batch", p.probe.reference_batch.to_string());
        kv("fit_epochs", p.fit.epochs.to_string());
        kv("fit_batch", p.fit.batch.to_string());
        kv("fit_lr", p.fit.lr.to_string());
        kv("validation_fraction", p.fit.validation_fraction.to_string());
        kv(
            "fit_init",
            match p.fit.init {
                FitInit::Fresh => "fresh",
                FitInit::ContinueFromLast => "continue",
            }
            .into(),
        );
        kv(
            "head",
            match p.fit.head {
                Head::Linear => "linear".into(),
                Head::Mlp { hidden } => format!("mlp:{hidden}"),
            },
        );
        kv("feature_dim", p.featurizer.dim.to_string());
        kv("feature_order", p.featurizer.max_order.to_string());
        kv("feature_chunk_len", p.featurizer.chunk_len.to_string());
        kv("feature_seed", p.featurizer.seed.to_string());
        kv("train_size", c.train.to_string());
        kv("holdout_size", c.holdout.to_string());
        kv("reference_size", c.reference.to_string());
        kv("min_len", c.min_len.to_string());
        kv("max_len", c.max_len.to_string());
        kv("mix_clean", c.mix.clean.to_string());
        kv("mix_noise", c.mix.noise.to_string());
        kv("mix_shuffled", c.mix.shuffled.to_string());
        s
    }
}

fn parse_inner(text: &str, seed_override: Option<&str>, path: &Path) -> Result<ExperimentConfig> {
    let err = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut entries: BTreeMap<String, (usize, String)> = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| err(i + 1, format!("expected `key = value`, got `{line}`")))?;
        let k = k.trim().to_string();
        if entries.insert(k.clone(), (i + 1, v.trim().to_string())).is_some() {
            return Err(err(i + 1, format!("key `{k}` given twice")));
        }
    }
    if let Some(s) = seed_override {
        entries.insert("seed".into(), (0, s.trim().to_string()));
    }

    let mut cfg = match entries.remove("preset") {
        None => ExperimentConfig::desk(),
        Some((_, p)) if p == "desk" => ExperimentConfig::desk(),
        Some((_, p)) if p == "full" => ExperimentConfig::full(),
        Some((line, p)) => return Err(err(line, format!("unknown preset `{p}`"))),
    };
    let mut decay_set = false;
    let mut corpus_seed = None;

    for (key, (line, value)) in &entries {
        let line = *line;
        fn num<T: FromStr>(v: &str, line: usize, key: &str, path: &Path) -> Result<T>
        where
            T::Err: std::fmt::Display,
        {
            v.parse().map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                line,
                message: format!("`{key}`: {e}"),
            })
        }
        macro_rules! set {
            ($field:expr) => {
                $field = num(value, line, key, path)?
            };
        }
        let p = &mut cfg.pipeline;
        let c = &mut cfg.corpus;
        match key.as_str() {
            "seed" => {
                let s: u64 = num(value, line, key, path)?;
                p.seed = s;
                c.seed = s;
            }
            "corpus_seed" => corpus_seed = Some(num::<u64>(value, line, key, path)?),
            "mode" => p.mode = value.parse().map_err(|e| err(line, format!("{e}")))?,
            "total_steps" => set!(p.total_steps),
            "update_interval" => set!(p.update_interval),
            "batch_size" => set!(p.batch_size),
            "eval_interval" => set!(p.eval_interval),
            "oracle_budget_first" => set!(p.oracle_budget_first),
            "oracle_budget" => set!(p.oracle_budget),
            "probe_reference_size" => set!(p.probe_reference_size),
            "selection_ratio" => set!(p.selection.ratio),
            "tau" => set!(p.selection.tau),
            "selection_seed" => set!(p.selection.seed),
            "warmup" => set!(p.wsd.warmup),
            "decay" => {
                set!(p.wsd.decay);
                decay_set = true;
            }
            "max_lr" => set!(p.wsd.max_lr),
            "arch" => {
                p.lm.arch = match value.as_str() {
                    "bigram" => Arch::Bigram,
                    "transformer" => Arch::Transformer,
                    _ => return Err(err(line, format!("unknown arch `{value}`"))),
                }
            }
            "vocab_size" => {
                set!(p.lm.vocab_size);
                c.vocab_size = p.lm.vocab_size;
            }
            "context_len" => set!(p.lm.context_len),
            "d_model" => set!(p.lm.d_model),
            "n_layers" => set!(p.lm.n_layers),
            "n_heads" => set!(p.lm.n_heads),
            "probe_optimizer" => {
                p.probe.optimizer = match value.as_str() {
                    "adam_clone" => ProbeOptimizer::AdamClone,
                    "sgd" => ProbeOptimizer::Sgd,
                    _ => return Err(err(line, format!("unknown probe optimizer `{value}`"))),
                }
            }
            "probe_lr" => {
                p.probe.lr = if value == "scheduler" {
                    ProbeLr::SchedulerCurrent
                } else {
                    ProbeLr::Fixed(num(value, line, key, path)?)
                }
            }
            "reference_batch" => set!(p.probe.reference_batch),
            "fit_epochs" => set!(p.fit.epochs),
            "fit_batch" => set!(p.fit.batch),
            "fit_lr" => set!(p.fit.lr),
            "validation_fraction" => set!(p.fit.validation_fraction),
            "fit_init" => {
                p.fit.init = match value.as_str() {
                    "fresh" => FitInit::Fresh,
                    "continue" => FitInit::ContinueFromLast,
                    _ => return Err(err(line, format!("unknown fit_init `{value}`"))),
                }
            }
            "head" => {
                p.fit.head = match value.split_once(':') {
                    None if value == "linear" => Head::Linear,
                    Some(("mlp", h)) => Head::Mlp {
                        hidden: num(h, line, key, path)?,
                    },
                    _ => return Err(err(line, format!("unknown head `{value}`"))),
                }
            }
            "feature_dim" => set!(p.featurizer.dim),
            "feature_order" => set!(p.featurizer.max_order),
            "feature_chunk_len" => set!(p.featurizer.chunk_len),
            "feature_seed" => set!(p.featurizer.seed),
            "train_size" => set!(c.train),
            "holdout_size" => set!(c.holdout),
            "reference_size" => set!(c.reference),
            "min_len" => set!(c.min_len),
            "max_len" => set!(c.max_len),
            "mix_clean" => set!(c.mix.clean),
            "mix_noise" => set!(c.mix.noise),
            "mix_shuffled" => set!(c.mix.shuffled),
            _ => return Err(err(line, format!("unknown key `{key}`"))),
        }
    }
    if let Some(s) = corpus_seed {
        cfg.corpus.seed = s;
    }
    let p = &mut cfg.pipeline;
    p.wsd.stable_end = p.total_steps;
    if !decay_set {
        p.wsd.decay = eval_decay_steps(p.total_steps);
    }
    if !entries.contains_key("eval_interval") {
        p.eval_interval = (p.update_interval / 5).max(1);
    }
    cfg.corpus.validate()?;
    cfg.pipeline.validate()?;
    if cfg.corpus.max_len > cfg.pipeline.lm.context_len {
        return Err(Error::Core(mates_core::Error::Config(format!(
            "max_len {} exceeds context_len {}",
            cfg.corpus.max_len, cfg.pipeline.lm.context_len
        ))));
    }
    Ok(cfg)
}
