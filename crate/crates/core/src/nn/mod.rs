//! Dense tensor numerics: primitives with exact gradients, a reverse-mode
//! tape, Adam, and a finite-difference checker.

pub mod adam;
pub mod checkpoint;
pub mod gradcheck;
pub mod graph;
pub mod ops;
pub mod param;
mod tensor;

pub use adam::{AdamConfig, AdamState};
pub use gradcheck::{grad_check, GradCheckReport};
pub use graph::{Gradients, Graph, NodeId};
pub use ops::LstmParams;
pub use param::{GradBuffer, ParamId, ParamStore, Parameter};
pub use tensor::Tensor;
