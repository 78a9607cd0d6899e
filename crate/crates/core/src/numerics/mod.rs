//! Dense tensors with reverse-mode gradients, optimizers and
//! checkpoints.

pub mod checkpoint;
mod gradcheck;
mod graph;
pub mod optim;
mod params;
mod tensor;

pub use gradcheck::gradient_check;
pub use graph::{Adjoints, Graph, SetIndex, Var};
pub(crate) use graph::softmax_in_place;
pub use optim::{Optimizer, OptimizerConfig};
pub use params::{ParamId, ParamStore, Parameter};
pub use tensor::Tensor;
