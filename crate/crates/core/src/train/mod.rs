//! Training loop: optimizer, learning-rate schedule and early stopping.

pub mod adam;
pub mod schedule;
pub mod trainer;

pub use adam::{adam_step, OptimizerState};
pub use schedule::{early_stop, lr_on_plateau, EpochRecord, TrainConfig, TrainHistory};
pub use trainer::{evaluate, save_run, train, Evaluation, LabelledSet, TrainOutcome};
