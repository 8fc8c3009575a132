use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mates::checkpoint::{load_model, load_regressor, save_model, save_regressor};
use mates::config::ExperimentConfig;
use mates::corpus_io::{load_corpus, save_corpus};
use mates::eval::{audit_selection, compare_runs, run_label, spearman_trajectory, write_report_csvs};
use mates::parallel::Rayon;
use mates::records::{
    load_oracle_records, load_report, save_oracle_records, save_report, save_selection, selection_entries,
    write_oracle_csv, SelectionEntry,
};
use mates_core::corpus::{generate, Example};
use mates_core::influence::{fit, predict_pool, FitInit};
use mates_core::model::LanguageModel;
use mates_core::optim::{wsd_lr_unchecked, AdamState};
use mates_core::oracle::{probe_many, Prober};
use mates_core::pipeline::{run_full, Mode};
use mates_core::rng::{derive, tags};
use mates_core::selection::{gumbel_top_k, Scored};

#[derive(Parser)]
#[command(name = "mates", version, about = "Model-aware pretraining data selection lab")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// key = value config file; keys not given keep the preset values
    #[arg(long)]
    config: Option<PathBuf>,
    /// desk or full, used when no config file is given
    #[arg(long, default_value = "desk")]
    preset: String,
    /// Overrides the config seed (and MATES_SEED)
    #[arg(long)]
    seed: Option<u64>,
}

impl Common {
    fn load(&self) -> mates::Result<ExperimentConfig> {
        let cfg = match &self.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::from_env(&self.preset)?,
        };
        Ok(match self.seed {
            Some(s) => {
                let corpus_seed = cfg.corpus.seed;
                let derived = cfg.corpus.seed == cfg.pipeline.seed;
                let mut c = cfg.with_seed(s);
                if !derived {
                    c.corpus.seed = corpus_seed;
                }
                c
            }
            None => cfg,
        })
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic corpus
    GenCorpus {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run a pretraining experiment in one mode
    Run {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        corpus: PathBuf,
        /// mates, random, ngram, static or static@<s>; overrides the config
        #[arg(long)]
        mode: Option<String>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        selection_out: Option<PathBuf>,
        #[arg(long)]
        checkpoint_out: Option<PathBuf>,
    },
    /// Probe oracle influences of hold-out examples at a checkpoint
    Probe {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 200)]
        count: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Fit an influence model on oracle records
    FitInfluence {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        records: PathBuf,
        /// Continue from this regressor instead of starting fresh
        #[arg(long)]
        from: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score the training pool and draw a selection
    Select {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        regressor: PathBuf,
        #[arg(long, default_value_t = 0)]
        stage: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Summarize run reports and optionally write CSV tables
    Report {
        reports: Vec<PathBuf>,
        /// Directory for loss_curves.csv, spearman.csv, audit.csv, comparison.csv
        #[arg(long)]
        csv: Option<PathBuf>,
        /// Corpus for selection audits
        #[arg(long)]
        corpus: Option<PathBuf>,
        /// Loss threshold for steps-to-threshold; defaults to the final loss
        /// of the first random run
        #[arg(long)]
        threshold: Option<f64>,
    },
}

fn find_examples<'a>(corpus: &'a mates_core::corpus::CorpusSplit) -> std::collections::HashMap<u64, &'a Example> {
    corpus.iter_tagged().map(|(_, e)| (e.id, e)).collect()
}

fn gen_corpus(common: &Common, out: &Path) -> mates::Result<()> {
    let cfg = common.load()?;
    let corpus = generate(&cfg.corpus)?;
    save_corpus(&corpus, out)?;
    println!(
        "wrote {} train, {} hold-out, {} reference examples to {}",
        corpus.train_pool.len(),
        corpus.holdout.len(),
        corpus.reference.len(),
        out.display()
    );
    Ok(())
}

fn run_cmd(
    common: &Common,
    corpus: &Path,
    mode: Option<&str>,
    out: &Path,
    selection_out: Option<&Path>,
    checkpoint_out: Option<&Path>,
) -> mates::Result<()> {
    let mut cfg = common.load()?;
    if let Some(m) = mode {
        cfg.pipeline.mode = m.parse::<Mode>()?;
    }
    let corpus = load_corpus(corpus)?;
    let result = run_full(&Rayon, &corpus, &cfg.pipeline);
    let output = match result {
        Ok(o) => o,
        Err(e) => {
            save_report(&e.partial, out)?;
            eprintln!("partial report written to {}", out.display());
            return Err(e.error.into());
        }
    };
    let report = &output.report;
    save_report(report, out)?;
    if let Some(p) = selection_out {
        save_selection(&selection_entries(report), p)?;
    }
    if let Some(p) = checkpoint_out {
        save_model(p, output.lm.config(), &output.state, Some(&output.adam))?;
    }
    println!(
        "{}: final reference loss {:.5}, selection FLOPs share {:.3}",
        run_label(report),
        report.final_loss().unwrap_or(f64::NAN),
        report.ledger.selection_share()
    );
    Ok(())
}

fn probe_cmd(common: &Common, corpus: &Path, checkpoint: &Path, count: usize, out: &Path, csv: Option<&Path>) -> mates::Result<()> {
    let cfg = common.load()?.pipeline;
    let corpus = load_corpus(corpus)?;
    let (lm_cfg, state, adam) = load_model(checkpoint)?;
    let lm = LanguageModel::new(lm_cfg)?;
    let adam = adam.unwrap_or_else(|| AdamState::new(state.params.len()));
    let lr = wsd_lr_unchecked(state.step as f64, &cfg.wsd);
    let prober = Prober::new(&lm, &state, &corpus.reference, cfg.probe, lr)?;
    let examples: Vec<Example> = corpus.holdout.iter().take(count).cloned().collect();
    let outcome = probe_many(&Rayon, &prober, &state, &adam, &examples)?;
    save_oracle_records(&outcome.records, out)?;
    if let Some(p) = csv {
        write_oracle_csv(&outcome.records, p)?;
    }
    println!(
        "probed {} examples at step {} ({} failed), base reference loss {:.5}",
        outcome.records.len(),
        state.step,
        outcome.failures.len(),
        prober.base_loss()
    );
    Ok(())
}

fn fit_cmd(common: &Common, corpus: &Path, records: &Path, from: Option<&Path>, out: &Path) -> mates::Result<()> {
    let cfg = common.load()?.pipeline;
    let corpus = load_corpus(corpus)?;
    let by_id = find_examples(&corpus);
    let records = load_oracle_records(records)?;
    let mut features = Vec::with_capacity(records.len());
    for r in &records {
        let e = by_id
            .get(&r.example_id)
            .ok_or_else(|| mates_core::Error::Contract(format!("record for unknown example {}", r.example_id)))?;
        features.push(cfg.featurizer.featurize(&e.tokens));
    }
    let targets: Vec<f64> = records.iter().map(|r| r.influence).collect();
    let previous = from.map(load_regressor).transpose()?;
    let fit_cfg = mates_core::influence::FitConfig {
        init: if previous.is_some() { FitInit::ContinueFromLast } else { FitInit::Fresh },
        seed: derive(cfg.seed, tags::FIT, 0),
        ..cfg.fit
    };
    let (reg, report) = fit(previous.as_ref().map(|p| &p.0), &features, &targets, cfg.featurizer.dim, &fit_cfg)?;
    save_regressor(out, &reg, &cfg.featurizer)?;
    match report.validation_spearman {
        Some(rho) => println!("validation Spearman {rho:.4} on {} records", report.validation_count),
        None => println!("validation Spearman undefined on {} records", report.validation_count),
    }
    Ok(())
}

fn select_cmd(common: &Common, corpus: &Path, regressor: &Path, stage: usize, out: &Path) -> mates::Result<()> {
    let cfg = common.load()?.pipeline;
    let corpus = load_corpus(corpus)?;
    let (reg, featurizer) = load_regressor(regressor)?;
    let features: Vec<_> = corpus.train_pool.iter().map(|e| featurizer.featurize(&e.tokens)).collect();
    let (scores, _) = predict_pool(&Rayon, &reg, &features);
    let scored: Vec<Scored> = corpus
        .train_pool
        .iter()
        .zip(scores)
        .map(|(e, score)| Scored { id: e.id, score })
        .collect();
    let k = cfg.selection.k_for(scored.len());
    let seed = derive(cfg.seed ^ cfg.selection.seed, tags::SELECT, stage as u64);
    let picked = gumbel_top_k(&scored, k, cfg.selection.tau, seed)?;
    let entries: Vec<SelectionEntry> = picked
        .iter()
        .map(|s| SelectionEntry {
            id: s.id,
            score: s.score,
            stage,
        })
        .collect();
    save_selection(&entries, out)?;
    println!("selected {k} of {} examples", scored.len());
    Ok(())
}

fn report_cmd(paths: &[PathBuf], csv: Option<&Path>, corpus: Option<&Path>, threshold: Option<f64>) -> mates::Result<()> {
    let reports = paths.iter().map(|p| load_report(p)).collect::<mates::Result<Vec<_>>>()?;
    let corpus = corpus.map(load_corpus).transpose()?;
    for r in &reports {
        print!("{:<16} final {:.5}  share {:.3}", run_label(r), r.final_loss().unwrap_or(f64::NAN), r.ledger.selection_share());
        if let Some(c) = &corpus {
            if let Some(last) = audit_selection(r, c)?.stages.last() {
                print!("  final precision {:.3}", last.precision);
            }
        }
        if let Some(p) = spearman_trajectory(r).last().and_then(|p| p.rho) {
            print!("  final rho {p:.3}");
        }
        println!();
    }
    let threshold = threshold.or_else(|| {
        reports
            .iter()
            .find(|r| r.mode == Mode::Random)
            .and_then(|r| r.final_loss())
    });
    if reports.len() > 1 || csv.is_some() {
        let cmp = compare_runs(&reports)?;
        if let Some(t) = threshold {
            for (label, s) in cmp.labels.iter().zip(cmp.steps_to_threshold(t)) {
                match s {
                    Some(s) => println!("{label}: reaches {t:.5} at step {s}"),
                    None => println!("{label}: never reaches {t:.5}"),
                }
            }
        }
        if let Some(dir) = csv {
            write_report_csvs(dir, &reports, corpus.as_ref())?;
            cmp.write_csv(&dir.join("comparison.csv"))?;
            println!("tables written to {}", dir.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::GenCorpus { common, out } => gen_corpus(common, out),
        Command::Run {
            common,
            corpus,
            mode,
            out,
            selection_out,
            checkpoint_out,
        } => run_cmd(common, corpus, mode.as_deref(), out, selection_out.as_deref(), checkpoint_out.as_deref()),
        Command::Probe {
            common,
            corpus,
            checkpoint,
            count,
            out,
            csv,
        } => probe_cmd(common, corpus, checkpoint, *count, out, csv.as_deref()),
        Command::FitInfluence {
            common,
            corpus,
            records,
            from,
            out,
        } => fit_cmd(common, corpus, records, from.as_deref(), out),
        Command::Select {
            common,
            corpus,
            regressor,
            stage,
            out,
        } => select_cmd(common, corpus, regressor, *stage, out),
        Command::Report {
            reports,
            csv,
            corpus,
            threshold,
        } => report_cmd(reports, csv.as_deref(), corpus.as_deref(), *threshold),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
