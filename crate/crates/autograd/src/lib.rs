//! Minimal CPU tensor engine with reverse-mode differentiation.
//!
//! Values live on a [`Tape`]; every operation records enough context to
//! produce gradients for its inputs on the backward pass. The element type
//! is generic so training can run in f32 while all gradient checking runs
//! in f64.

mod check;
mod ops;
mod optim;
mod tape;

pub use check::{grad_check, grad_check_projected};
pub use optim::{adam_step, AdamState, CosineSchedule};
pub use tape::{Tape, Var};

use ndarray::{ArrayD, LinalgScalar, ScalarOperand};
use num_traits::Float;
use thiserror::Error;

/// Scalar element of a tensor. Implemented for `f32` and `f64`.
pub trait Element:
    LinalgScalar
    + Float
    + ScalarOperand
    + std::ops::AddAssign
    + std::fmt::Debug
    + std::fmt::Display
    + Send
    + Sync
    + 'static
{
    /// Dtype tag used by the on-disk formats (0 = f32, 1 = f64).
    const DTYPE: u8;
    const BYTE_WIDTH: usize;

    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;
    fn write_le(self, out: &mut Vec<u8>);
    fn read_le(bytes: &[u8]) -> Self;
}

impl Element for f32 {
    const DTYPE: u8 = 0;
    const BYTE_WIDTH: usize = 4;
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    fn to_f64(self) -> f64 {
        self as f64
    }
    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn read_le(bytes: &[u8]) -> Self {
        f32::from_le_bytes(bytes[..4].try_into().unwrap())
    }
}

impl Element for f64 {
    const DTYPE: u8 = 1;
    const BYTE_WIDTH: usize = 8;
    fn from_f64(v: f64) -> Self {
        v
    }
    fn to_f64(self) -> f64 {
        self
    }
    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn read_le(bytes: &[u8]) -> Self {
        f64::from_le_bytes(bytes[..8].try_into().unwrap())
    }
}

#[derive(Debug, Error)]
pub enum AutogradError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("backward called on non-scalar value of shape {0:?}")]
    NonScalarLoss(Vec<usize>),
}

pub type Result<T> = std::result::Result<T, AutogradError>;

/// True when every element is finite; used by debug evaluation paths.
pub fn all_finite<E: Element>(a: &ArrayD<E>) -> bool {
    a.iter().all(|v| v.is_finite())
}
