use alloc::string::String;
use alloc::vec::Vec;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("index {index} out of range (bound {bound})")]
    Index { index: usize, bound: usize },
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("invalid config: {0}")]
    Config(String),
    #[error("non-finite value in {0}")]
    Numeric(String),
    #[error("step {step} outside schedule range [0, {end})")]
    Range { step: u64, end: u64 },
    #[error("no convergence after {iterations} sweeps (last max change {max_change:e}, residual norm {residual:e})")]
    Convergence {
        iterations: usize,
        max_change: f64,
        residual: f64,
    },
    #[error("degenerate targets: all {0} values are identical")]
    DegenerateTarget(usize),
    #[error("correlation undefined: zero rank variance")]
    UndefinedCorrelation,
    #[error("probe of example {id} failed: {reason}")]
    Probe { id: u64, reason: String },
}

impl Error {
    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}
