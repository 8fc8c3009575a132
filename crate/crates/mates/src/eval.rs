//! Experiment analysis: selection precision against the planted quality
//! tags, loss-curve comparison and influence-model Spearman trajectories.
//!
//! CSV schemas:
//!
//! * `loss_curves.csv`: `step,mode,ref_loss,flops`
//! * `audit.csv`: `stage,clean,noise,shuffled,precision`
//! * `spearman.csv`: `step,mode,rho` (`rho` empty when undefined)
//! * comparison tables: `step` then `<label>_ref_loss,<label>_flops` per run

use std::collections::{BTreeSet, HashMap};
use std::path::Path;

use mates_core::corpus::{tag_counts, CorpusSplit, QualityTag};
use mates_core::pipeline::RunReport;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::corpus_io::{open_reader, Sink};
use crate::records::{finish_csv, selection_entries, SelectionEntry};
use crate::Result;

fn contract(msg: String) -> crate::Error {
    crate::Error::Core(mates_core::Error::Contract(msg))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StageAudit {
    pub stage: usize,
    pub clean: usize,
    pub noise: usize,
    pub shuffled: usize,
    /// clean / selected
    pub precision: f64,
}

impl StageAudit {
    pub fn selected(&self) -> usize {
        self.clean + self.noise + self.shuffled
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionAudit {
    pub stages: Vec<StageAudit>,
    /// Clean, noise and shuffled counts of the whole training pool.
    pub pool: [usize; 3],
    /// Clean fraction of the pool.
    pub base_precision: f64,
}

/// Counts selected examples per stage and quality tag.
pub fn audit_entries(entries: &[SelectionEntry], corpus: &CorpusSplit) -> Result<SelectionAudit> {
    let tags: HashMap<u64, QualityTag> = corpus.train_pool.iter().map(|e| (e.id, e.quality)).collect();
    let mut per_stage: std::collections::BTreeMap<usize, [usize; 3]> = Default::default();
    for e in entries {
        let tag = tags
            .get(&e.id)
            .ok_or_else(|| contract(format!("selected id {} is not in the training pool", e.id)))?;
        let c = per_stage.entry(e.stage).or_default();
        c[*tag as usize] += 1;
    }
    let stages = per_stage
        .into_iter()
        .map(|(stage, [clean, noise, shuffled])| StageAudit {
            stage,
            clean,
            noise,
            shuffled,
            precision: clean as f64 / (clean + noise + shuffled) as f64,
        })
        .collect();
    let pool = tag_counts(&corpus.train_pool);
    Ok(SelectionAudit {
        stages,
        pool,
        base_precision: pool[0] as f64 / corpus.train_pool.len().max(1) as f64,
    })
}

pub fn audit_selection(report: &RunReport, corpus: &CorpusSplit) -> Result<SelectionAudit> {
    audit_entries(&selection_entries(report), corpus)
}

/// Loss and ledger columns of several runs on a shared evaluation grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub labels: Vec<String>,
    pub steps: Vec<u64>,
    /// `losses[run][point]`
    pub losses: Vec<Vec<f64>>,
    pub flops: Vec<Vec<u64>>,
}

impl Comparison {
    pub fn header(&self) -> Vec<String> {
        let mut h = vec!["step".to_string()];
        for l in &self.labels {
            h.push(format!("{l}_ref_loss"));
            h.push(format!("{l}_flops"));
        }
        h
    }

    /// Point-wise loss differences `run a − run b`.
    pub fn loss_differences(&self, a: usize, b: usize) -> Vec<f64> {
        self.losses[a].iter().zip(&self.losses[b]).map(|(x, y)| x - y).collect()
    }

    /// First step at which each run's reference loss is at or below
    /// `threshold`.
    pub fn steps_to_threshold(&self, threshold: f64) -> Vec<Option<u64>> {
        self.losses
            .iter()
            .map(|l| l.iter().position(|&v| v <= threshold).map(|i| self.steps[i]))
            .collect()
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_writer(Sink::create(path)?);
        w.write_record(self.header())?;
        for (i, step) in self.steps.iter().enumerate() {
            let mut row = vec![step.to_string()];
            for r in 0..self.labels.len() {
                row.push(self.losses[r][i].to_string());
                row.push(self.flops[r][i].to_string());
            }
            w.write_record(&row)?;
        }
        finish_csv(w, path)
    }
}

/// Label used for a run in tables: mode and seed.
pub fn run_label(report: &RunReport) -> String {
    format!("{}_s{}", report.mode, report.seed)
}

/// Aligns runs on their evaluation grid. Every run must have evaluated at
/// the same steps; otherwise the error lists the steps not shared by all.
pub fn compare_runs(reports: &[RunReport]) -> Result<Comparison> {
    let first = reports.first().ok_or_else(|| contract("compare_runs: no reports".into()))?;
    let steps: Vec<u64> = first.evals.iter().map(|e| e.step).collect();
    let mut offending = BTreeSet::new();
    for r in reports {
        let s: BTreeSet<u64> = r.evals.iter().map(|e| e.step).collect();
        let base: BTreeSet<u64> = steps.iter().copied().collect();
        offending.extend(s.symmetric_difference(&base).copied());
        if s.len() != r.evals.len() || base.len() != steps.len() {
            return Err(contract(format!("duplicate evaluation steps in {}", run_label(r))));
        }
    }
    if !offending.is_empty() {
        return Err(contract(format!("evaluation grids differ at steps {offending:?}")));
    }
    let mut labels: Vec<String> = Vec::new();
    for r in reports {
        let base = run_label(r);
        let mut label = base.clone();
        let mut n = 2;
        while labels.contains(&label) {
            label = format!("{base}_{n}");
            n += 1;
        }
        labels.push(label);
    }
    Ok(Comparison {
        labels,
        steps,
        losses: reports.iter().map(|r| r.evals.iter().map(|e| e.ref_loss).collect()).collect(),
        flops: reports.iter().map(|r| r.evals.iter().map(|e| e.flops).collect()).collect(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryPoint {
    pub step: u64,
    pub rho: Option<f64>,
}

/// Influence-model Spearman at every stage after the warm-up stage.
pub fn spearman_trajectory(report: &RunReport) -> Vec<TrajectoryPoint> {
    report
        .stages
        .iter()
        .skip(1)
        .map(|s| TrajectoryPoint {
            step: s.step,
            rho: s.spearman,
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossRow {
    pub step: u64,
    pub mode: String,
    pub ref_loss: f64,
    pub flops: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpearmanRow {
    pub step: u64,
    pub mode: String,
    pub rho: Option<f64>,
}

pub fn loss_rows(reports: &[RunReport]) -> Vec<LossRow> {
    reports
        .iter()
        .flat_map(|r| {
            let mode = run_label(r);
            r.evals.iter().map(move |e| LossRow {
                step: e.step,
                mode: mode.clone(),
                ref_loss: e.ref_loss,
                flops: e.flops,
            })
        })
        .collect()
}

pub fn spearman_rows(reports: &[RunReport]) -> Vec<SpearmanRow> {
    reports
        .iter()
        .flat_map(|r| {
            let mode = run_label(r);
            spearman_trajectory(r).into_iter().map(move |p| SpearmanRow {
                step: p.step,
                mode: mode.clone(),
                rho: p.rho,
            })
        })
        .collect()
}

pub fn write_rows<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Sink::create(path)?);
    for r in rows {
        w.serialize(r)?;
    }
    finish_csv(w, path)
}

pub fn read_rows<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let mut rdr = csv::Reader::from_reader(open_reader(path)?);
    Ok(rdr.deserialize().collect::<std::result::Result<_, _>>()?)
}

/// Writes `loss_curves.csv`, `spearman.csv` and, when a corpus is given,
/// `audit.csv` (stages of all runs, in run order) into `dir`.
pub fn write_report_csvs(dir: &Path, reports: &[RunReport], corpus: Option<&CorpusSplit>) -> Result<()> {
    write_rows(&dir.join("loss_curves.csv"), &loss_rows(reports))?;
    write_rows(&dir.join("spearman.csv"), &spearman_rows(reports))?;
    if let Some(c) = corpus {
        let mut rows = Vec::new();
        for r in reports {
            rows.extend(audit_selection(r, c)?.stages);
        }
        write_rows(&dir.join("audit.csv"), &rows)?;
    }
    Ok(())
}
