//! Staged training: trajectory predictor, scene encoder, VAN backbones and
//! the fusion head, each with its own schedule and freezing set.

mod config;
mod data;
mod fit;
mod pipeline;

pub use config::{DataConfig, Loss, StageSpec, TrainConfig, PARAM_GROUPS};
pub use data::{constant_velocity_windows, stack, window_tensors, DataBundle};
pub use fit::{fit, steps_per_epoch, BatchOut, Hooks, EpochRecord, FitOutcome, Validation};
pub use pipeline::{train_all, Pipeline, TrainAllReport, TrainingRunRecord};
