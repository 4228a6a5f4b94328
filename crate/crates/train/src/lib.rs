//! Training, evaluation and checkpointing for the fusion segmentation model.

mod checkpoint;
mod metrics;
mod trainer;

pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use metrics::{compute_metrics, ClassMetrics, ConfusionMatrix, Metrics};
pub use trainer::{
    batch_inputs, batch_labels, evaluate, train, EpochCallback, EpochLog, ExperimentPreset,
    StepLog, TrainConfig, TrainReport,
};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error(
        "training diverged at epoch {epoch}, step {step}: loss {loss} (lr {lr:e}); \
         lower the learning rate or check the input scaling"
    )]
    Diverged {
        epoch: usize,
        step: usize,
        loss: f64,
        lr: f64,
    },
    #[error(transparent)]
    Autograd(#[from] eaf_autograd::AutogradError),
    #[error(transparent)]
    Model(#[from] eaf_model::ModelError),
    #[error(transparent)]
    Data(#[from] eaf_data::DataError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, TrainError>;
