//! Dataset preparation, the training loop, and checkpoints.

mod config;
mod dataset;
mod overfit;
mod train;

pub use config::TrainConfig;
pub use dataset::{ingest_dataset, load_images, samples_from_images, IngestOptions, TrainSample};
pub use overfit::{overfit_single, overfit_with, single_sample, OverfitOptions, OverfitReport, MAX_OVERFIT_SIDE};
pub use train::{
    alpha_for, batch_indices, load_checkpoint, loss_graph, save_checkpoint, train, training_step, AdamConfig,
    TrainerState,
};
