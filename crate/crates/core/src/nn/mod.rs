//! Dense-network numeric kernel: tensors, layers, a gradient tape, Adam and
//! a finite-difference gradient checker.

pub mod adam;
pub mod gradcheck;
pub mod layer;
pub mod tape;
pub mod tensor;

pub use adam::{AdamConfig, AdamState};
pub use gradcheck::{grad_check, GradCheckOptions, GradCheckReport};
pub use layer::{Activation, DenseLayer, ParamId, ParamSet};
pub use tape::{dense_forward, Gradients, NodeId, Tape};
pub use tensor::Tensor2;
