//! Reverse-mode differentiable tensors.
//!
//! A [`Graph`] records each operation as it executes; [`Graph::backward`]
//! replays the record in reverse. Learnable tensors live in a
//! [`ParamStore`] and are bound to a graph per step.

mod elementwise;
mod gradcheck;
mod graph;
mod linalg;
pub mod nn;
mod optim;
mod params;
mod reduce;
mod shape_ops;
mod tensor;

pub use elementwise::{phi1, sigmoid, softplus, BinaryKind, UnaryKind};
pub use gradcheck::{grad_check, numeric_grad};
pub use graph::{CustomOp, Graph, Var};
pub use linalg::conv_out_len;
pub use optim::{clip_global_norm, Adam, AdamConfig};
pub use params::{Grads, ParamId, ParamStore};
pub use tensor::{broadcast_shape, numel, strides, Tensor};
