//! Reverse-mode automatic differentiation over dense tensors, plus Adam with
//! linear warmup.

mod gradcheck;
mod graph;
pub mod kernels;
mod optim;

pub use gradcheck::{fd_gradient, max_relative_error, RELATIVE_ERROR_FLOOR};
pub use graph::{Graph, NodeId, OpKind};
pub use optim::{adam_step, OptimizerState, WarmupSchedule, BETA1, BETA2, EPSILON};

#[cfg(test)]
mod tests;
