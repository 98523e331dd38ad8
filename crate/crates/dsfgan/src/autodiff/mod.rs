//! Minimal reverse-mode automatic differentiation over dense `f64` tensors.
//!
//! A [`Tape`] records operations eagerly (define-by-run); [`Tape::backward`]
//! replays the recording in reverse to accumulate gradients. Sized for small
//! MLP generators, critics, and downstream models — not a general framework.

mod adam;
mod tape;
mod tensor;

pub use adam::AdamState;
pub use tape::{NodeId, Op, Tape};
pub use tensor::Tensor;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum AutodiffError {
    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },
    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },
    #[error("backward requires a scalar output, got shape {0:?}")]
    NonScalarOutput(Vec<usize>),
}

pub type Result<T> = std::result::Result<T, AutodiffError>;
