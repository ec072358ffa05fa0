//! Small reverse-mode autodiff engine over dense `f64` tensors.
//!
//! Gradients are computed functionally with [`grad`], which can record its
//! own graph so that penalties on input gradients (such as a WGAN gradient
//! penalty) can be differentiated with respect to model parameters.

mod functional;
mod grad;
mod kernels;
pub mod nn;
mod ops;
pub mod optim;
mod tensor;

pub use functional::{conv2d, cross_entropy, linear};
pub use grad::grad;
pub use kernels::ConvGeometry;
pub use tensor::{is_grad_enabled, no_grad, GradModeGuard, Tensor};

pub mod testing;
