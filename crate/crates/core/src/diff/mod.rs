//! Dense double-precision tensors with reverse-mode differentiation.
//!
//! Every value is a 2-D [`Tensor`]; scalars are `1 x 1` and vectors are
//! single rows or columns. Operations are recorded on a [`Tape`] and
//! [`Tape::backward`] returns gradients for the named parameters of a
//! [`ParamStore`].

mod checkpoint;
mod optim;
mod spline;
mod store;
mod tape;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use optim::{Adam, AdamConfig};
pub use spline::{hat_basis, SplineGeometry};
pub use store::{Gradients, ParamStore};
pub use tape::{grad_check, Tape, Var};

use thiserror::Error;

pub type Tensor = ndarray::Array2<f64>;

#[derive(Debug, Error)]
pub enum DiffError {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },
    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),
    #[error("loss must be a 1x1 tensor, got {0}x{1}")]
    NonScalarLoss(usize, usize),
    #[error("unknown parameter `{0}`")]
    UnknownParam(String),
    #[error("no gradient for parameter `{0}`")]
    MissingGradient(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
