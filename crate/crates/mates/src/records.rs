//! Oracle records, selections and run reports on disk.

use std::path::Path;

use mates_core::oracle::OracleRecord;
use mates_core::pipeline::RunReport;
use serde::{Deserialize, Serialize};

use crate::corpus_io::{read_jsonl, write_jsonl, Sink};
use crate::{Error, Result};

pub fn save_oracle_records(records: &[OracleRecord], path: &Path) -> Result<()> {
    write_jsonl(path, records)
}

pub fn load_oracle_records(path: &Path) -> Result<Vec<OracleRecord>> {
    read_jsonl(path)
}

/// CSV with header `example_id,step,influence`; floats use the shortest
/// representation that parses back to the same value.
pub fn write_oracle_csv(records: &[OracleRecord], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_writer(Sink::create(path)?);
    w.write_record(["example_id", "step", "influence"])?;
    for r in records {
        w.write_record([r.example_id.to_string(), r.step.to_string(), r.influence.to_string()])?;
    }
    finish_csv(w, path)
}

pub fn read_oracle_csv(path: &Path) -> Result<Vec<OracleRecord>> {
    let mut rdr = csv::Reader::from_reader(crate::corpus_io::open_reader(path)?);
    let mut out = Vec::new();
    for (i, row) in rdr.records().enumerate() {
        let row = row?;
        let bad = |m: String| Error::Parse {
            path: path.to_path_buf(),
            line: i + 2,
            message: m,
        };
        let field = |k: usize| row.get(k).ok_or_else(|| bad(format!("missing column {k}")));
        out.push(OracleRecord {
            example_id: field(0)?.parse().map_err(|e| bad(format!("{e}")))?,
            step: field(1)?.parse().map_err(|e| bad(format!("{e}")))?,
            influence: field(2)?.parse().map_err(|e| bad(format!("{e}")))?,
        });
    }
    Ok(out)
}

pub(crate) fn finish_csv(w: csv::Writer<Sink>, path: &Path) -> Result<()> {
    let sink = w.into_inner().map_err(|e| Error::format(path, e.to_string()))?;
    sink.finish().map_err(Error::io(path))
}

/// One selected example.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SelectionEntry {
    pub id: u64,
    pub score: f64,
    pub stage: usize,
}

/// Flattens every stage's selection of a report, in stage order.
pub fn selection_entries(report: &RunReport) -> Vec<SelectionEntry> {
    report
        .stages
        .iter()
        .flat_map(|s| {
            s.selected.iter().map(move |x| SelectionEntry {
                id: x.id,
                score: x.score,
                stage: s.stage,
            })
        })
        .collect()
}

pub fn save_selection(entries: &[SelectionEntry], path: &Path) -> Result<()> {
    write_jsonl(path, entries)
}

pub fn load_selection(path: &Path) -> Result<Vec<SelectionEntry>> {
    read_jsonl(path)
}

pub fn save_report(report: &RunReport, path: &Path) -> Result<()> {
    let mut sink = Sink::create(path)?;
    serde_json::to_writer_pretty(&mut sink, report)?;
    sink.finish().map_err(Error::io(path))
}

pub fn load_report(path: &Path) -> Result<RunReport> {
    Ok(serde_json::from_reader(crate::corpus_io::open_reader(path)?)?)
}
