//! Reverse-mode autodiff, optimizer, and checkpoint plumbing.

pub mod check;
pub mod checkpoint;
pub mod graph;
pub mod optim;
pub mod tensor;

pub use check::{assert_gradients_match, check_gradients, CheckOptions, ParamCheck};
pub use graph::{Graph, NodeId};
pub use optim::{clear_grads, AdamW, AdamWConfig};
pub use tensor::{ParamSet, Tensor};
