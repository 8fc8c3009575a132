use alloc::vec::Vec;

use super::{Forward, InitKind, LMConfig, Layout};
use crate::numerics::{Tape, Tensor};
use crate::Result;

pub(super) fn layout(config: &LMConfig) -> Layout {
    let mut l = Layout::new();
    l.push("logits", &[config.vocab_size, config.vocab_size], InitKind::Normal);
    l
}

pub(super) fn forward<S: AsRef<[u32]>>(layout: &Layout, params: &[f64], batch: &[S]) -> Result<Forward> {
    let seg = &layout.segments()[0];
    let mut tape = Tape::new();
    let table = tape.leaf(Tensor::new(seg.shape.clone(), params[seg.range()].to_vec())?);
    let mut prev = Vec::new();
    let mut targets = Vec::new();
    for seq in batch {
        for w in seq.as_ref().windows(2) {
            prev.push(w[0] as usize);
            targets.push(w[1] as usize);
        }
    }
    let logits = tape.gather(table, &prev)?;
    Ok(Forward {
        tape,
        logits,
        targets,
        params: alloc::vec![table],
    })
}
