//! Training, fine-tuning, evaluation and prediction around the network:
//! run configuration, data loading, augmentation and checkpoints.

pub mod augment;
pub mod checkpoint;
pub mod config;
pub mod data;
pub mod infer;
pub mod train;

pub use augment::augment_sample;
pub use checkpoint::Checkpoint;
pub use config::{AugmentConfig, DataConfig, InferenceMode, RunConfig, TrainConfig, SEED_ENV};
pub use data::{case_name, list_cases, load_cases, to_input_size, Case};
pub use infer::{aggregate, evaluate, predict_labels, Evaluation, Predictor};
pub use train::{planned_steps, run, schedule_tau, LogRow, Phase, RunFiles, Trainer, LOG_HEADER};
