//! Minimal reverse-mode differentiation over dense `f64` tensors.

mod check;
mod graph;
mod tensor;

pub use check::{check_gradient, GradientReport, RELATIVE_ERROR_FLOOR};
pub use graph::{sigmoid_scalar, CustomBackward, Gradients, Graph, NodeId, Parameter};
pub use tensor::Tensor;

pub(crate) use tensor::gemm;
