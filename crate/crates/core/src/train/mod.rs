//! Losses, metrics, optimizers, the learning-rate schedule and the fit loop.

mod fit;
mod loss;
mod optim;
mod schedule;

pub use fit::{evaluate, evaluate_with, fit, train_step, EpochRecord, Evaluation, StepOutcome, Summary, TrainConfig, TrainReport};
pub use loss::{argmax, cross_entropy, metrics, Metrics};
pub use optim::{Optimizer, OptimizerConfig, OptimizerKind};
pub use schedule::ScheduleConfig;
