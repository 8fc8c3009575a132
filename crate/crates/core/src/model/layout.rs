use alloc::string::String;
use alloc::vec::Vec;
use core::ops::Range;

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::rng;

/// Standard deviation of normally initialized weights.
pub const INIT_STD: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum InitKind {
    Normal,
    Zeros,
    Ones,
}

/// A named slice of the flat parameter vector.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
    pub init: InitKind,
}

impl Segment {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> Range<usize> {
        self.offset..self.offset + self.len()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Layout {
    segments: Vec<Segment>,
    total: usize,
}

impl Layout {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, shape: &[usize], init: InitKind) -> usize {
        let seg = Segment {
            name: name.into(),
            shape: shape.to_vec(),
            offset: self.total,
            init,
        };
        self.total += seg.len();
        self.segments.push(seg);
        self.segments.len() - 1
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn total(&self) -> usize {
        self.total
    }

    /// Segment containing flat index `i`.
    pub fn segment_of(&self, i: usize) -> Option<&Segment> {
        self.segments.iter().find(|s| s.range().contains(&i))
    }

    pub fn initialize(&self, seed: u64) -> Vec<f64> {
        let mut r = rng::stream(seed, rng::tags::INIT, 0);
        let normal = Normal::new(0.0, INIT_STD).expect("positive std");
        let mut out = Vec::with_capacity(self.total);
        for seg in &self.segments {
            for _ in 0..seg.len() {
                out.push(match seg.init {
                    InitKind::Normal => normal.sample(&mut r),
                    InitKind::Zeros => 0.0,
                    InitKind::Ones => 1.0,
                });
            }
        }
        out
    }
}
