//! Minimal dense tensors with reverse-mode differentiation.
//!
//! A [`Graph`] records one forward pass. Parameters enter as leaves with
//! `requires_grad`, operations append nodes, and [`Graph::backward`] sweeps
//! the tape in reverse to fill leaf gradients. The optimizer and checkpoint
//! format live alongside.

mod adam;
mod checkpoint;
mod graph;
mod kernels;
mod tensor;

pub use adam::{AdamConfig, AdamState};
pub use checkpoint::{Checkpoint, CheckpointError, NamedTensor, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use graph::{softmax_rows, BatchNormConfig, BatchNormState, Graph, Mode, Var};
pub use tensor::{Real, Tensor};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("label {label} is out of range for {classes} classes")]
    InvalidLabel { label: usize, classes: usize },
    #[error("variable is not part of a recorded graph that requires gradients")]
    DetachedGraph,
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

impl TensorError {
    pub fn code(&self) -> &'static str {
        match self {
            TensorError::ShapeMismatch(_) => "ShapeMismatch",
            TensorError::InvalidLabel { .. } => "InvalidLabel",
            TensorError::DetachedGraph => "DetachedGraph",
            TensorError::InvalidArgument(_) => "InvalidArgument",
        }
    }
}
