//! Dense 64-bit tensors and a define-by-run reverse-mode tape.
//!
//! Only the handful of primitives the two language models need are provided.
//! Broadcasting is limited to adding a bias row to every row of a matrix; any
//! other shape disagreement is an error.

mod kernels;
mod tape;
mod tensor;

pub use kernels::{gemm_nn, gemm_nt, gemm_tn};
pub use tape::{Gradients, Tape, Var, MASK_VALUE};
pub use tensor::Tensor;

/// `sqrt(2/pi)` used by the tanh form of GELU.
pub const GELU_C: f64 = 0.797_884_560_802_865_4;
/// Cubic coefficient of the tanh GELU approximation.
pub const GELU_CUBIC: f64 = 0.044_715;
/// Variance floor inside layer normalization.
pub const LAYER_NORM_EPS: f64 = 1e-5;
