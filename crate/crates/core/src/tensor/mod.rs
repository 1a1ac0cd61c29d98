//! Dense tensors, reverse-mode differentiation, layers and the optimizer.

mod adam;
mod checkpoint;
mod dense;
pub mod gradcheck;
mod graph;
pub mod nn;
mod params;

pub use adam::AdamState;
pub use checkpoint::{Checkpoint, NamedTensor, CHECKPOINT_FORMAT, CHECKPOINT_VERSION};
pub use dense::Tensor;
pub use gradcheck::{grad_check, grad_check_params, GradCheckReport};
pub use graph::{matmul_plain, sigmoid, Gradients, Graph, Var};
pub use params::{ParamId, ParamStore};
