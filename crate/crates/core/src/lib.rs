//! Training small networks under group-sparsity and sparse-group-Lasso
//! penalties with proximal gradient descent, and compacting them afterwards.
//!
//! The pieces, bottom up:
//!
//! - [`tensor`]: row-major `f64` tensors, norms and the convolution kernels.
//! - [`network`]: sequential networks stored as per-neuron parameter groups,
//!   with forward and backward passes and a checkpoint format.
//! - [`regularization`]: the penalty value and its closed-form proximal map.
//! - [`trainer`]: momentum SGD on the loss with one proximal pass per epoch.
//! - [`pruner`]: removal of zeroed neurons and the sparsity report.
//! - [`data`]: IDX/CSV loading and the teacher-student synthetic task.
//! - [`verify`]: a brute-force minimizer used to check the proximal map.

pub mod data;
pub mod error;
pub mod network;
pub mod pruner;
pub mod regularization;
pub mod tensor;
pub mod trainer;
pub mod verify;

pub use error::{Error, Result};
pub use network::{LayerSpec, LossKind, Network, NetworkSpec, NeuronGroup, ParamSet};
pub use regularization::RegularizerConfig;
pub use tensor::Tensor;
