//! Learned components: a minimal reverse-mode autodiff tensor graph, the
//! object-based forward-dynamics models built on it, and the task-solution
//! scorers.

pub mod forward;
pub mod solution;
pub mod tensor;
