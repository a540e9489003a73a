//! Supervised loss, Adam, the training loop and the loss-weight sweep.

pub mod loss;
pub mod optim;
pub mod sweep;
pub mod trainer;

pub use loss::{loss, loss_and_grad, registration_distance, LossBreakdown, LossWeights};
pub use optim::Adam;
pub use sweep::{select_cell, sweep_lambdas, SweepRow};
pub use trainer::{
    batch_loss, common_geometry, loss_gradients, overfit_batch, train, HistoryRow, OverfitReport, StepResult,
    TrainConfig, TrainHistory, TrainOutcome,
};
