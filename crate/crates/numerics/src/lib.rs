//! Differentiable array computation for training small transformers on a CPU.
//!
//! The crate provides a dense row-major [`Array`], a recording [`Tape`] with
//! reverse-mode differentiation over the handful of kernels a seq2seq
//! transformer needs, named [`Parameter`]s, and an AdamW optimizer with a
//! linear learning-rate schedule.
//!
//! Everything is generic over [`Real`] so the same model code runs at 32-bit
//! for training and at 64-bit for finite-difference gradient checks.

mod array;
pub mod gradcheck;
pub mod init;
mod optim;
mod param;
mod real;
mod tape;

pub use array::Array;
pub use optim::{clip_grad_norm, linear_schedule, AdamW, AdamWConfig, OptimizerState};
pub use param::{ParamId, ParamStore, Parameter};
pub use real::Real;
pub use tape::{Tape, Var};

/// Value substituted for masked attention scores.
///
/// Finite so that arrays stay finite; after max subtraction `exp` of it is
/// exactly zero in both precisions.
pub const MASK_VALUE: f64 = -1.0e9;

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum NumericsError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("loss must be a scalar, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("schedule step {step} exceeds total steps {total}")]
    ScheduleOverrun { step: u64, total: u64 },
    #[error("invalid optimizer configuration: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, NumericsError>;
