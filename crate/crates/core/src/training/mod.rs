mod adam;
pub mod gradcheck;
mod loss;
mod train;

pub use adam::{Adam, BETA1, BETA2, EPSILON};
pub use gradcheck::{grad_check, GradReport, GradTarget};
pub use loss::{loss, loss_with_grad, LossNorm, LossReport};
pub use train::{
    evaluate, heldout_set, reconstruct, sample_gradient, train, EvalSummary, StepLog, TrainConfig, TrainLog,
};
