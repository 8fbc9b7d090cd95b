//! A small dense network engine: forward and backward passes, Nesterov SGD
//! with inverse decay, and a finite-difference gradient oracle.

pub mod gradcheck;
pub mod layer;
pub mod optim;

pub use gradcheck::{finite_diff_grad, max_relative_error};
pub use layer::{backprop, mlp_forward, Activation, Activations, DenseLayer, GradientBundle, Mlp};
pub use optim::{inverse_schedule, sgd_nesterov_step, InverseSchedule, LayerStack, OptimizerState};
