//! Small dense reverse-mode autodiff: just the primitives the flow needs,
//! plus Adam and a finite-difference gradient checker.

mod adam;
mod gradcheck;
mod graph;
mod tensor;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use gradcheck::{gradient_check, GradCheckReport, REL_ERROR_FLOOR};
pub use graph::{Graph, NodeId, Op};
pub use tensor::Tensor;
