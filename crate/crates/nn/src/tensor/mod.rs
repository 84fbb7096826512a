//! Dense-matrix reverse-mode automatic differentiation.
//!
//! Values are rank-2 tensors stored as `Vec<f64>`. In [`Precision::F32`]
//! every op result (and every parameter update) is rounded through `f32`,
//! which gives single-precision numerics with one shared code path; the
//! gradient-check suite runs the same graphs in [`Precision::F64`].
//!
//! Shape errors surface when a node is constructed, not at evaluation time.
//! Non-finite forward values abort evaluation with the offending node's
//! label.

mod checkpoint;
mod gradcheck;
mod graph;
mod store;

#[cfg(test)]
mod tests;

pub use checkpoint::{read_checkpoint, write_checkpoint, CHECKPOINT_MAGIC};
pub use gradcheck::gradient_check;
pub use graph::{sinusoidal_encoding_table, Graph, NodeId};
pub use store::{GradMap, Init, Optimizer, ParameterStore, Tensor};

use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Precision {
    F32,
    F64,
}

impl Precision {
    pub(crate) fn round(self, data: &mut [f64]) {
        if self == Precision::F32 {
            for v in data {
                *v = *v as f32 as f64;
            }
        }
    }
}

#[derive(Debug, Error)]
pub enum TensorError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("non-finite value in node {0}")]
    NonFinite(String),
    #[error("usage error: {0}")]
    Usage(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
}
