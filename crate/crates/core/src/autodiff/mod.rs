//! A small reverse-mode automatic differentiation engine over dense tensors.
//!
//! The operator set is exactly what the path/link model needs. Every forward
//! op appends a node to a [`Graph`] tape; [`Graph::backward`] walks the tape in
//! reverse and returns one gradient tensor per registered parameter.

mod fastmath;
mod gru;
mod params;
mod tape;
mod tensor;

pub use gru::{gru_step, BoundGru, GruParams};
pub use params::{adam_update, AdamConfig, Gradients, LrSchedule, ParamId, ParamStore};
pub use tape::{Graph, Var, SELU_ALPHA, SELU_SCALE};
pub use tensor::{Scalar, Tensor};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AutodiffError {
    #[error("{op}: shape mismatch: {detail}")]
    Shape { op: &'static str, detail: String },
    #[error("{op} produced a non-finite value")]
    NonFinite { op: &'static str },
    #[error("backward needs a scalar output, got shape {0:?}")]
    NonScalar(Vec<usize>),
    #[error("{op}: index {index} out of range for {len} rows")]
    Index { op: &'static str, index: usize, len: usize },
    #[error("unknown parameter {0}")]
    UnknownParam(String),
    #[error("duplicate parameter name {0}")]
    DuplicateParam(String),
}

pub type Result<T> = std::result::Result<T, AutodiffError>;
