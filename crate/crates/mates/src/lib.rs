//! File formats, configuration, parallel execution and experiment reports
//! around [`mates_core`].

pub mod checkpoint;
pub mod config;
pub mod corpus_io;
pub mod error;
pub mod eval;
pub mod parallel;
pub mod records;

pub use error::{Error, Result};
pub use mates_core;
