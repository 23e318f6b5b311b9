//! Small f64 tensor library with reverse-mode automatic differentiation,
//! sized for training compact convolutional segmentation networks on a CPU.
//!
//! Tensors are dense, row-major and NCHW for image data. Differentiable
//! operations take and return [`Var`] nodes; calling [`Var::backward`] on a
//! scalar accumulates gradients into the [`Param`]s that fed the graph.

mod autograd;
pub mod counter;
mod error;
mod gemm;
pub mod ops;
mod param;
mod tensor;

pub use autograd::{Gradients, Var};
pub use error::{Result, TensorError};
pub use param::{Param, ParamKind};
pub use tensor::Tensor;
