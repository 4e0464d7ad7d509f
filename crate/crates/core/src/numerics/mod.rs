//! Dense tensors and reverse-mode automatic differentiation.

mod gradcheck;
mod params;
mod tape;
mod tensor;

pub use gradcheck::{grad_check, GradCheckReport};
pub use params::{Gradients, ParamId, ParamSet};
pub use tape::{Tape, Var, PROB_CLAMP};
pub use tensor::{layer_norm, matmul, sigmoid, softmax_rows, Tensor};

/// Layer-norm epsilon used throughout the encoder.
pub const LAYER_NORM_EPS: f64 = 1e-12;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum NumericsError {
    #[error("dimension error in {op}: {left:?} vs {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("shape {shape:?} does not hold {len} values")]
    DataLength { shape: Vec<usize>, len: usize },
    #[error("shape {0:?} has a zero dimension")]
    InvalidShape(Vec<usize>),
    #[error("rows have different lengths")]
    RaggedRows,
    #[error("backward needs a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("parameter {0:?} already exists")]
    DuplicateParam(String),
}
