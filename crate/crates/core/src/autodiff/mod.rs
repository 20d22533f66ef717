//! Dense 2-D tensors with reverse-mode differentiation and an AdamW optimizer.

pub mod check;
mod graph;
mod optim;
mod tensor;

pub use graph::{Gradients, Graph, Var, SQRT_GRAD_FLOOR};
pub use optim::{AdamW, AdamWConfig, CosineSchedule};
pub use tensor::{ParamId, ParamStore, Tensor};
