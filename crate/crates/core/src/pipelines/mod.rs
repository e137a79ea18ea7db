//! Training procedures: dense multi-task training, mask identification,
//! masked parameter updates and continual learning.

pub mod config;
mod procedures;
mod suite;

pub use config::{ContinualData, Precision, RegistryChoice, RewindTarget, RunConfig};
pub use procedures::{
    continual_learn, identify_masks, identify_masks_task_agnostic, single_task_update, train_dense, update_parameters,
    ContinualMode, MaskSearch, TrainedModel,
};
pub use suite::{HistoryRecord, StepMask, Suite, TaskStream, Trainer, TrainingHistory, THREADS_ENV};
