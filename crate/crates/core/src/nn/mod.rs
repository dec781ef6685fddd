//! Minimal tensor and reverse-mode autodiff layer used by the model.

pub mod graph;
pub mod optim;
pub mod params;
pub mod tensor;

pub use graph::{softmax, Axis, BatchStats, Gradients, Graph, Var};
pub use optim::{poly_lr, Adam};
pub use params::{ParamId, ParamStore};
pub use tensor::{Real, Tensor};
