//! Minimal reverse-mode differentiation: tensors, a recording graph, layers,
//! Adam, finite-difference checking and a checkpoint container.

mod check;
pub mod checkpoint;
mod graph;
pub mod layers;
mod optim;
mod tensor;

pub use check::{grad_check, grad_check_sampled, primitive_cases, GradCase};
pub use checkpoint::Container;
pub use graph::{ConvGeom, Gradients, Graph, Var};
pub use layers::{Conv2d, Dense, Embedding, LstmCell};
pub use optim::Adam;
pub use tensor::{ParamId, ParamStore, Tensor};

#[cfg(test)]
mod tests;
