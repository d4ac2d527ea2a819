//! A small reverse-mode automatic differentiation engine over `f64` matrices.

mod graph;
mod sparse;
mod tensor;

pub use graph::{CustomBackward, Graph, Var};
pub use sparse::SparseMap;
pub use tensor::Tensor;
