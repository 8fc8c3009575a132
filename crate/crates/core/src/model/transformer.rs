//! Pre-norm decoder-only transformer with learned positional embeddings and
//! untied input/output embeddings.
//!
//! Sequences in a batch are right-padded to the longest one. Causal attention
//! keeps padding from reaching real positions, and only real positions feed
//! the loss.

use alloc::format;
use alloc::vec::Vec;

use super::{Forward, InitKind, LMConfig, Layout};
use crate::math;
use crate::numerics::{Tape, Tensor, Var};
use crate::Result;

pub(super) fn layout(c: &LMConfig) -> Layout {
    let (v, d, t) = (c.vocab_size, c.d_model, c.context_len);
    let ff = 4 * d;
    let mut l = Layout::new();
    l.push("tok_emb", &[v, d], InitKind::Normal);
    l.push("pos_emb", &[t, d], InitKind::Normal);
    for i in 0..c.n_layers {
        l.push(format!("h{i}.ln1.g"), &[d], InitKind::Ones);
        l.push(format!("h{i}.ln1.b"), &[d], InitKind::Zeros);
        for name in ["q", "k", "v", "o"] {
            l.push(format!("h{i}.attn.w{name}"), &[d, d], InitKind::Normal);
            l.push(format!("h{i}.attn.b{name}"), &[d], InitKind::Zeros);
        }
        l.push(format!("h{i}.ln2.g"), &[d], InitKind::Ones);
        l.push(format!("h{i}.ln2.b"), &[d], InitKind::Zeros);
        l.push(format!("h{i}.mlp.w1"), &[d, ff], InitKind::Normal);
        l.push(format!("h{i}.mlp.b1"), &[ff], InitKind::Zeros);
        l.push(format!("h{i}.mlp.w2"), &[ff, d], InitKind::Normal);
        l.push(format!("h{i}.mlp.b2"), &[d], InitKind::Zeros);
    }
    l.push("ln_f.g", &[d], InitKind::Ones);
    l.push("ln_f.b", &[d], InitKind::Zeros);
    l.push("head.w", &[d, v], InitKind::Normal);
    l.push("head.b", &[v], InitKind::Zeros);
    l
}

struct Params<'a> {
    vars: &'a [Var],
    next: usize,
}

impl Params<'_> {
    fn take(&mut self) -> Var {
        let v = self.vars[self.next];
        self.next += 1;
        v
    }
}

fn linear(tape: &mut Tape, x: Var, w: Var, b: Var) -> Result<Var> {
    let y = tape.matmul(x, w)?;
    tape.add_row_bias(y, b)
}

pub(super) fn forward<S: AsRef<[u32]>>(
    config: &LMConfig,
    layout: &Layout,
    params: &[f64],
    batch: &[S],
) -> Result<Forward> {
    let mut tape = Tape::new();
    let vars: Vec<Var> = layout
        .segments()
        .iter()
        .map(|seg| {
            let t = Tensor::new(seg.shape.clone(), params[seg.range()].to_vec()).expect("layout shape");
            tape.leaf(t)
        })
        .collect();
    let mut p = Params { vars: &vars, next: 0 };

    let seqs = batch.len();
    let len = batch.iter().map(|s| s.as_ref().len()).max().unwrap_or(0);
    let heads = config.n_heads;
    let dh = config.d_model / heads;

    let mut ids = Vec::with_capacity(seqs * len);
    let mut pos = Vec::with_capacity(seqs * len);
    let mut rows = Vec::new();
    let mut targets = Vec::new();
    for (s, seq) in batch.iter().enumerate() {
        let seq = seq.as_ref();
        for t in 0..len {
            ids.push(seq.get(t).copied().unwrap_or(0) as usize);
            pos.push(t);
            if t + 1 < seq.len() {
                rows.push(s * len + t);
                targets.push(seq[t + 1] as usize);
            }
        }
    }

    let tok_emb = p.take();
    let pos_emb = p.take();
    let te = tape.gather(tok_emb, &ids)?;
    let pe = tape.gather(pos_emb, &pos)?;
    let mut x = tape.add(te, pe)?;
    let scale = 1.0 / math::sqrt(dh as f64);

    for _ in 0..config.n_layers {
        let (g1, b1) = (p.take(), p.take());
        let (wq, bq, wk, bk) = (p.take(), p.take(), p.take(), p.take());
        let (wv, bv, wo, bo) = (p.take(), p.take(), p.take(), p.take());
        let (g2, b2) = (p.take(), p.take());
        let (w_up, b_up, w_down, b_down) = (p.take(), p.take(), p.take(), p.take());

        let h = tape.layer_norm(x, g1, b1)?;
        let q = linear(&mut tape, h, wq, bq)?;
        let k = linear(&mut tape, h, wk, bk)?;
        let v = linear(&mut tape, h, wv, bv)?;
        let qh = tape.split_heads(q, seqs, len, heads)?;
        let kh = tape.split_heads(k, seqs, len, heads)?;
        let vh = tape.split_heads(v, seqs, len, heads)?;
        let scores = tape.batched_matmul(qh, kh, seqs * heads, true)?;
        let scores = tape.scale(scores, scale);
        let scores = tape.causal_mask(scores, len)?;
        let attn = tape.softmax_rows(scores)?;
        let ctx = tape.batched_matmul(attn, vh, seqs * heads, false)?;
        let ctx = tape.merge_heads(ctx, seqs, len, heads)?;
        let proj = linear(&mut tape, ctx, wo, bo)?;
        x = tape.add(x, proj)?;

        let h = tape.layer_norm(x, g2, b2)?;
        let up = linear(&mut tape, h, w_up, b_up)?;
        let act = tape.gelu(up);
        let down = linear(&mut tape, act, w_down, b_down)?;
        x = tape.add(x, down)?;
    }

    let (gf, bf) = (p.take(), p.take());
    let (w_head, b_head) = (p.take(), p.take());
    let h = tape.layer_norm(x, gf, bf)?;
    let h = tape.gather(h, &rows)?;
    let logits = linear(&mut tape, h, w_head, b_head)?;
    Ok(Forward {
        tape,
        logits,
        targets,
        params: vars,
    })
}
