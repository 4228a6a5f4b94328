//! Batch frontend: derive polarization channels, dataset statistics, scene
//! synthesis, preset training/evaluation, attention dumps and a self-check
//! suite.

pub mod commands;
pub mod config;
pub mod render;
pub mod verify;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("invalid arguments: {0}")]
    Args(String),
    #[error("{0}")]
    Check(String),
    #[error(transparent)]
    Polar(#[from] eaf_polarimetry::PolarError),
    #[error(transparent)]
    Data(#[from] eaf_data::DataError),
    #[error(transparent)]
    Model(#[from] eaf_model::ModelError),
    #[error(transparent)]
    Train(#[from] eaf_train::TrainError),
    #[error(transparent)]
    Autograd(#[from] eaf_autograd::AutogradError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("image write failed: {0}")]
    Image(#[from] image::ImageError),
    #[error("png encode failed: {0}")]
    Png(#[from] png::EncodingError),
}

pub type Result<T> = std::result::Result<T, CliError>;
