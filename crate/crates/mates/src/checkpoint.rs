//! Binary checkpoints for language models and influence regressors.
//!
//! All integers are little-endian `u64` unless noted; floats are
//! little-endian IEEE-754 `f64`.
//!
//! Language model (`MTLM`):
//!
//! | field | type |
//! |---|---|
//! | magic | 4 bytes `MTLM` |
//! | version | `u32` (currently 1) |
//! | vocab_size, context_len, d_model, n_layers, n_heads | `u64` each |
//! | arch | `u64`, 0 bigram, 1 transformer |
//! | seed | `u64` |
//! | step | `u64` |
//! | parameter count `P` | `u64` |
//! | parameters | `P × f64` in layout order |
//! | optimizer flag | `u8`, 0 absent, 1 present |
//!
//! When the optimizer is present it follows as a segment table and payload:
//!
//! | field | type |
//! |---|---|
//! | segment count | `u32` (always 2) |
//! | per segment: name length, name, value count | `u16`, UTF-8 bytes, `u64` |
//! | update counter `t` | `u64` |
//! | beta1, beta2, eps | `f64` each |
//! | segment values | `f64` runs in table order (`adam.m`, `adam.v`) |
//!
//! Influence regressor (`MTIF`):
//!
//! | field | type |
//! |---|---|
//! | magic | 4 bytes `MTIF` |
//! | version | `u32` (currently 1) |
//! | head | `u64`, 0 linear, 1 MLP |
//! | hidden width | `u64` (0 for linear) |
//! | feature dim, n-gram order, chunk length, hash seed | `u64` each |
//! | parameter count `P` | `u64` |
//! | parameters | `P × f64` |

use std::path::Path;

use mates_core::influence::{Featurizer, Head, Regressor};
use mates_core::model::{Arch, LMConfig, LanguageModel, ModelState};
use mates_core::optim::AdamState;

use crate::{Error, Result};

pub const MODEL_MAGIC: &[u8; 4] = b"MTLM";
pub const REGRESSOR_MAGIC: &[u8; 4] = b"MTIF";
pub const FORMAT_VERSION: u32 = 1;

const ADAM_SEGMENTS: [&str; 2] = ["adam.m", "adam.v"];

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], String> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| format!("truncated at byte {}", self.pos))?;
        let out = &self.buf[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u8(&mut self) -> std::result::Result<u8, String> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> std::result::Result<u16, String> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> std::result::Result<u32, String> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> std::result::Result<u64, String> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn usize(&mut self) -> std::result::Result<usize, String> {
        usize::try_from(self.u64()?).map_err(|e| e.to_string())
    }

    fn f64(&mut self) -> std::result::Result<f64, String> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64s(&mut self, n: usize) -> std::result::Result<Vec<f64>, String> {
        let bytes = self.take(n.checked_mul(8).ok_or("length overflow")?)?;
        Ok(bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
    }

    fn header(&mut self, magic: &[u8; 4]) -> std::result::Result<(), String> {
        if self.take(4)? != magic {
            return Err(format!("bad magic, expected {}", String::from_utf8_lossy(magic)));
        }
        let v = self.u32()?;
        if v != FORMAT_VERSION {
            return Err(format!("unsupported format version {v}"));
        }
        Ok(())
    }

    fn end(&self) -> std::result::Result<(), String> {
        if self.pos != self.buf.len() {
            return Err(format!("{} trailing bytes", self.buf.len() - self.pos));
        }
        Ok(())
    }
}

fn put_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_f64s(out: &mut Vec<u8>, v: &[f64]) {
    for x in v {
        out.extend_from_slice(&x.to_le_bytes());
    }
}

pub fn encode_model(config: &LMConfig, state: &ModelState, adam: Option<&AdamState>) -> Vec<u8> {
    let mut out = Vec::with_capacity(96 + 8 * state.params.len() * if adam.is_some() { 3 } else { 1 });
    out.extend_from_slice(MODEL_MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    for v in [config.vocab_size, config.context_len, config.d_model, config.n_layers, config.n_heads] {
        put_u64(&mut out, v as u64);
    }
    put_u64(&mut out, matches!(config.arch, Arch::Transformer) as u64);
    put_u64(&mut out, config.seed);
    put_u64(&mut out, state.step);
    put_u64(&mut out, state.params.len() as u64);
    put_f64s(&mut out, &state.params);
    match adam {
        None => out.push(0),
        Some(a) => {
            out.push(1);
            out.extend_from_slice(&(ADAM_SEGMENTS.len() as u32).to_le_bytes());
            for (name, len) in ADAM_SEGMENTS.iter().zip([a.m.len(), a.v.len()]) {
                out.extend_from_slice(&(name.len() as u16).to_le_bytes());
                out.extend_from_slice(name.as_bytes());
                put_u64(&mut out, len as u64);
            }
            put_u64(&mut out, a.t);
            put_f64s(&mut out, &[a.beta1, a.beta2, a.eps]);
            put_f64s(&mut out, &a.m);
            put_f64s(&mut out, &a.v);
        }
    }
    out
}

/// Parses a model checkpoint. The parameter count is checked against the
/// layout implied by the stored config.
pub fn decode_model(bytes: &[u8]) -> std::result::Result<(LMConfig, ModelState, Option<AdamState>), String> {
    let mut r = Reader { buf: bytes, pos: 0 };
    r.header(MODEL_MAGIC)?;
    let mut dims = [0usize; 5];
    for d in &mut dims {
        *d = r.usize()?;
    }
    let arch = match r.u64()? {
        0 => Arch::Bigram,
        1 => Arch::Transformer,
        a => return Err(format!("unknown architecture code {a}")),
    };
    let config = LMConfig {
        vocab_size: dims[0],
        context_len: dims[1],
        d_model: dims[2],
        n_layers: dims[3],
        n_heads: dims[4],
        arch,
        seed: r.u64()?,
    };
    let step = r.u64()?;
    let lm = LanguageModel::new(config).map_err(|e| e.to_string())?;
    let n = r.usize()?;
    if n != lm.param_count() {
        return Err(format!("{n} parameters stored, config implies {}", lm.param_count()));
    }
    let params = r.f64s(n)?;
    let state = ModelState::new(lm.layout().clone(), params, step).map_err(|e| e.to_string())?;
    let adam = match r.u8()? {
        0 => None,
        1 => {
            let count = r.u32()? as usize;
            let mut table = Vec::with_capacity(count);
            for _ in 0..count {
                let len = r.u16()? as usize;
                let name = std::str::from_utf8(r.take(len)?).map_err(|e| e.to_string())?.to_string();
                table.push((name, r.usize()?));
            }
            let names: Vec<&str> = table.iter().map(|(s, _)| s.as_str()).collect();
            if names != ADAM_SEGMENTS {
                return Err(format!("unexpected optimizer segments {names:?}"));
            }
            if table.iter().any(|&(_, len)| len != n) {
                return Err("optimizer moments do not match parameter count".into());
            }
            let t = r.u64()?;
            let (beta1, beta2, eps) = (r.f64()?, r.f64()?, r.f64()?);
            let m = r.f64s(n)?;
            let v = r.f64s(n)?;
            Some(AdamState {
                m,
                v,
                t,
                beta1,
                beta2,
                eps,
            })
        }
        f => return Err(format!("bad optimizer flag {f}")),
    };
    r.end()?;
    Ok((config, state, adam))
}

pub fn save_model(path: &Path, config: &LMConfig, state: &ModelState, adam: Option<&AdamState>) -> Result<()> {
    write_bytes(path, &encode_model(config, state, adam))
}

pub fn load_model(path: &Path) -> Result<(LMConfig, ModelState, Option<AdamState>)> {
    let bytes = std::fs::read(path).map_err(Error::io(path))?;
    decode_model(&bytes).map_err(|m| Error::format(path, m))
}

pub fn encode_regressor(reg: &Regressor, featurizer: &Featurizer) -> Vec<u8> {
    let mut out = Vec::with_capacity(72 + 8 * reg.params.len());
    out.extend_from_slice(REGRESSOR_MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    let (kind, hidden) = match reg.head {
        Head::Linear => (0, 0),
        Head::Mlp { hidden } => (1, hidden as u64),
    };
    put_u64(&mut out, kind);
    put_u64(&mut out, hidden);
    put_u64(&mut out, reg.dim as u64);
    put_u64(&mut out, featurizer.max_order as u64);
    put_u64(&mut out, featurizer.chunk_len as u64);
    put_u64(&mut out, featurizer.seed);
    put_u64(&mut out, reg.params.len() as u64);
    put_f64s(&mut out, &reg.params);
    out
}

pub fn decode_regressor(bytes: &[u8]) -> std::result::Result<(Regressor, Featurizer), String> {
    let mut r = Reader { buf: bytes, pos: 0 };
    r.header(REGRESSOR_MAGIC)?;
    let kind = r.u64()?;
    let hidden = r.usize()?;
    let head = match kind {
        0 => Head::Linear,
        1 => Head::Mlp { hidden },
        k => return Err(format!("unknown head code {k}")),
    };
    let dim = r.usize()?;
    let featurizer = Featurizer {
        dim,
        max_order: r.usize()?,
        chunk_len: r.usize()?,
        seed: r.u64()?,
    };
    let n = r.usize()?;
    let params = r.f64s(n)?;
    r.end()?;
    let reg = Regressor::from_params(head, dim, params).map_err(|e| e.to_string())?;
    Ok((reg, featurizer))
}

pub fn save_regressor(path: &Path, reg: &Regressor, featurizer: &Featurizer) -> Result<()> {
    write_bytes(path, &encode_regressor(reg, featurizer))
}

pub fn load_regressor(path: &Path) -> Result<(Regressor, Featurizer)> {
    let bytes = std::fs::read(path).map_err(Error::io(path))?;
    decode_regressor(&bytes).map_err(|m| Error::format(path, m))
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(Error::io(dir))?;
    }
    std::fs::write(path, bytes).map_err(Error::io(path))
}
