pub mod gradcheck;
pub mod gru;
pub mod model;
pub mod optim;
pub mod graph;
pub mod ops;
pub mod prism_ops;
pub mod tensor;

pub use graph::{Gradients, Graph, ParamGroup, ParamId, ParamStore, Var};
pub use tensor::Tensor;
