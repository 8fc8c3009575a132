//! JSON-lines persistence for corpora and other record streams.
//!
//! Paths ending in `.gz` are gzip-compressed on write and decompressed on
//! read. A corpus file holds one example per line:
//!
//! ```text
//! {"id":17,"tokens":[3,9,41],"quality_tag":"clean","split":"train"}
//! ```

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use flate2::read::MultiGzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;
use mates_core::corpus::{CorpusSplit, Example, QualityTag, SplitKind};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

fn is_gz(path: &Path) -> bool {
    path.extension().is_some_and(|e| e == "gz")
}

pub fn open_reader(path: &Path) -> Result<Box<dyn BufRead>> {
    let file = File::open(path).map_err(Error::io(path))?;
    Ok(if is_gz(path) {
        Box::new(BufReader::new(MultiGzDecoder::new(file)))
    } else {
        Box::new(BufReader::new(file))
    })
}

/// A buffered file writer, gzip-compressed for `.gz` paths. Call
/// [`Sink::finish`] to flush and close it.
pub enum Sink {
    Plain(BufWriter<File>),
    Gz(GzEncoder<BufWriter<File>>),
}

impl Sink {
    pub fn create(path: &Path) -> Result<Sink> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(Error::io(dir))?;
        }
        let file = BufWriter::new(File::create(path).map_err(Error::io(path))?);
        Ok(if is_gz(path) {
            Sink::Gz(GzEncoder::new(file, Compression::default()))
        } else {
            Sink::Plain(file)
        })
    }

    pub fn finish(self) -> std::io::Result<()> {
        match self {
            Sink::Plain(mut w) => w.flush(),
            Sink::Gz(g) => g.finish()?.flush(),
        }
    }
}

impl Write for Sink {
    fn write(&mut self, buf: &[u8]) -> std::io::Result<usize> {
        match self {
            Sink::Plain(w) => w.write(buf),
            Sink::Gz(w) => w.write(buf),
        }
    }

    fn flush(&mut self) -> std::io::Result<()> {
        match self {
            Sink::Plain(w) => w.flush(),
            Sink::Gz(w) => w.flush(),
        }
    }
}

/// Writes one JSON document per line.
pub fn write_jsonl<'a, T: Serialize + 'a>(path: &Path, items: impl IntoIterator<Item = &'a T>) -> Result<()> {
    let mut sink = Sink::create(path)?;
    for item in items {
        serde_json::to_writer(&mut sink, item)?;
        sink.write_all(b"\n").map_err(Error::io(path))?;
    }
    sink.finish().map_err(Error::io(path))
}

/// Reads one JSON document per non-blank line. Parse errors carry the
/// 1-based line number.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    read_jsonl_with(path, |_, v| Ok(v))
}

fn read_jsonl_with<T: DeserializeOwned, U>(path: &Path, mut check: impl FnMut(usize, T) -> Result<U, String>) -> Result<Vec<U>> {
    let mut out = Vec::new();
    for (i, line) in open_reader(path)?.lines().enumerate() {
        let line = line.map_err(Error::io(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message,
        };
        let value: T = serde_json::from_str(&line).map_err(|e| parse_err(e.to_string()))?;
        out.push(check(i + 1, value).map_err(parse_err)?);
    }
    Ok(out)
}

#[derive(Debug, Serialize, Deserialize)]
struct CorpusLine {
    id: u64,
    tokens: Vec<u32>,
    quality_tag: QualityTag,
    split: SplitKind,
}

pub fn save_corpus(corpus: &CorpusSplit, path: &Path) -> Result<()> {
    let lines: Vec<CorpusLine> = corpus
        .iter_tagged()
        .map(|(split, e)| CorpusLine {
            id: e.id,
            tokens: e.tokens.clone(),
            quality_tag: e.quality,
            split,
        })
        .collect();
    write_jsonl(path, &lines)
}

/// Loads a corpus written by [`save_corpus`]. Lines keep their order within
/// each split. Empty sequences and repeated ids are rejected with the line
/// number of the offending record.
pub fn load_corpus(path: &Path) -> Result<CorpusSplit> {
    let mut seen = std::collections::HashSet::new();
    let lines = read_jsonl_with(path, |_, l: CorpusLine| {
        if l.tokens.is_empty() {
            return Err(format!("example {} has no tokens", l.id));
        }
        if !seen.insert(l.id) {
            return Err(format!("duplicate id {}", l.id));
        }
        Ok(l)
    })?;
    let mut corpus = CorpusSplit::default();
    for l in lines {
        let e = Example {
            id: l.id,
            tokens: l.tokens,
            quality: l.quality_tag,
        };
        match l.split {
            SplitKind::Train => corpus.train_pool.push(e),
            SplitKind::Holdout => corpus.holdout.push(e),
            SplitKind::Reference => corpus.reference.push(e),
        }
    }
    Ok(corpus)
}
