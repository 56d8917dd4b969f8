//! Dense tensors, reverse-mode autodiff, gradient verification, Adam, and
//! binary checkpoints.

pub mod checkpoint;
pub mod gradcheck;
pub mod graph;
pub mod params;
pub mod tensor;

pub use gradcheck::{finite_diff_check, finite_diff_check_many};
pub use graph::{Graph, Var};
pub use params::{clip_global_norm, Adam, ParamSet};
pub use tensor::Tensor;
