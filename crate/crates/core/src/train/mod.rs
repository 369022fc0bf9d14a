//! Losses, optimizers, learning-rate schedule and the epoch loop.

mod fit;
pub mod loss;
pub mod optim;
pub mod schedule;

pub use fit::{batch_loss, fit, train_step, EpochRecord, History, StepOutcome, TrainPlan};
pub use optim::{Optimizer, OptimizerSpec};
pub use schedule::ScheduleSpec;
