//! Toy-scale attention-bridged fusion segmentation network: per-branch
//! residual encoders, efficient channel-attention fusion, spatial pyramid
//! pooling and a ladder decoder.

mod config;
mod eac;
mod gradcheck;
mod layers;
mod net;
mod params;

pub use config::{BranchKind, BranchSpec, EafnetConfig, KernelParity};
pub use eac::{adaptive_kernel_size, Eac, FuseStage};
pub use gradcheck::end_to_end_grad_check;
pub use net::{AttentionCapture, Eafnet, ForwardOutput};
pub use params::{ForwardCtx, ParamEntry, ParamId, ParamStore};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("input mismatch: {0}")]
    InputMismatch(String),
    #[error("single-branch model has no attention")]
    NoAttention,
    #[error(transparent)]
    Autograd(#[from] eaf_autograd::AutogradError),
}

pub type Result<T> = std::result::Result<T, ModelError>;
