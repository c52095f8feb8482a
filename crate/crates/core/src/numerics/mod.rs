//! Dense `f32` tensors, a dynamic reverse-mode autodiff graph, AdamW and a
//! finite-difference gradient checker.

mod gradcheck;
mod graph;
mod optim;
mod params;
mod tensor;

pub use gradcheck::{grad_check, GradCheck, GradCheckReport};
pub use graph::{softmax_rows, Gradients, Graph, Var, LAYER_NORM_EPS};
pub use optim::{AdamW, AdamWConfig};
pub use params::{Bound, LayerNorm, Linear, ParamId, ParamStore};
pub use tensor::Tensor;

