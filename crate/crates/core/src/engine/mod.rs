//! Dense tensors, reverse-mode differentiation, MLP classifiers and SGD.

pub mod autodiff;
pub mod checkpoint;
pub mod gradcheck;
pub mod loss;
pub mod lr;
pub mod model;
pub mod optim;
pub mod tensor;

pub use autodiff::{Gradients, Tape, Var};
pub use gradcheck::grad_check;
pub use loss::{loss_margin, LossKind};
pub use lr::{lr_cyclic, lr_multistep, LrSchedule};
pub use model::{forward_backward, Backward, Batch, Engine, GradSet, MlpEngine, ModelParams};
pub use optim::{sgd_step, OptimState};
pub use tensor::Tensor;
