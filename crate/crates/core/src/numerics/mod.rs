//! Dense tensors, a gradient tape, and finite-difference gradient checks.

mod gradcheck;
mod graph;
pub(crate) mod ops;
mod tensor;

pub use gradcheck::{grad_check, grad_check_with, registered_ops, GradCheckConfig, GradCheckReport};
pub use graph::{CustomBackward, Graph, Var};
pub use tensor::{Scalar, Tensor};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NumericsError {
    #[error("{op}: shape mismatch between {lhs:?} and {rhs:?}")]
    ShapeMismatch { op: &'static str, lhs: Vec<usize>, rhs: Vec<usize> },
    #[error("{op}: expected a rank-{expected} tensor, got dims {dims:?}")]
    RankMismatch { op: &'static str, expected: usize, dims: Vec<usize> },
    #[error("dims {dims:?} do not describe {len} elements")]
    InvalidShape { dims: Vec<usize>, len: usize },
    #[error("axis {axis} out of range for a rank-{ndim} tensor")]
    InvalidAxis { axis: usize, ndim: usize },
    #[error("{op}: index {index} out of range (bound {bound})")]
    IndexOutOfRange { op: &'static str, index: usize, bound: usize },
    #[error("target {index} is {value}, expected 0 or 1")]
    NonBinaryTarget { index: usize, value: f64 },
    #[error("no differentiable op registered as {0:?}")]
    UnknownOp(String),
    #[error("{0}")]
    InvalidArgument(&'static str),
}

/// Elementwise logistic function.
pub fn sigmoid(x: f32) -> f32 {
    ops::sigmoid(x)
}

/// Softmax of a slice, max-subtracted.
pub fn softmax(xs: &[f32]) -> Vec<f32> {
    ops::softmax_forward(&Tensor::vector(xs.to_vec()), 0).into_data()
}
