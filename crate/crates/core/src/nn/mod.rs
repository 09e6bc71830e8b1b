//! Dense tensors, reverse-mode autodiff, layers and optimizer.

pub mod checkpoint;
pub mod gradcheck;
pub mod graph;
pub mod layers;
pub mod optim;
pub mod param;
pub mod tensor;

pub use graph::{Gradients, Graph, Var, NO_GROUP};
pub use optim::{AdamW, AdamWConfig};
pub use param::{ParamGrads, ParamId, ParamStore};
pub use tensor::Tensor;
