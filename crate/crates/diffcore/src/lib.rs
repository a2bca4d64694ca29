//! Reverse-mode differentiable tensors for small convolutional networks.
//!
//! Operations record themselves on an implicit graph whenever one of their
//! inputs tracks gradients. [`backward`] and [`grad`] walk that graph in
//! reverse creation order; with `create_graph = true` the gradients are
//! graph nodes too, which is what a gradient penalty needs.

mod backprop;
pub mod check;
mod conv;
mod elem;
mod error;
mod nn;
mod ops;
pub mod optim;
mod shape;
mod tensor;

pub use backprop::{backward, grad, Grads};
pub use conv::ConvGeom;
pub use elem::{DType, Elem};
pub use error::{Error, Result};
pub use nn::{batch_norm, layer_norm, Activation, NormConfig, RunningStats};
pub use optim::{AdamConfig, AdamState, PlateauState};
pub use shape::broadcast_shape;
pub use tensor::{grad_enabled, no_grad, Tensor};
