//! Model-aware data selection for language-model pretraining.
//!
//! The crate is `no_std` (with `alloc`) and holds every algorithmic piece of
//! the pipeline: a small reverse-mode autodiff engine, a bigram LM and a tiny
//! decoder-only transformer, Adam with a warmup-stable-decay schedule, the
//! synthetic corpus generator, locally probed influence oracles, the learned
//! influence model, Gumbel-Top-k selection, and the staged pipeline that ties
//! them together. File formats, the CLI and the multi-threaded executor live
//! in the `mates` companion crate.
#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod corpus;
pub mod error;
pub mod exec;
pub mod influence;
pub mod lasso;
pub mod math;
pub mod model;
pub mod numerics;
pub mod optim;
pub mod oracle;
pub mod pipeline;
pub mod rng;
pub mod selection;
pub mod stats;

pub use error::{Error, Result};
