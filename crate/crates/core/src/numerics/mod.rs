//! Dense f64 tensors and a tape-based reverse-mode differentiation engine.

mod gradcheck;
mod graph;
mod store;
mod tensor;

pub use gradcheck::{grad_check, GradCheckReport};
pub use graph::{Gradients, Graph, NodeId, Primitive, LAYER_NORM_EPS, LEAKY_SLOPE};
pub use store::ParamStore;
pub use tensor::{kernels, Tensor};
