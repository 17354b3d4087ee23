//! Minimal reverse-mode automatic differentiation over dense arrays.
//!
//! A [`Tape`] records every operation of one forward pass in creation order,
//! which is already a topological order; [`Tape::backward`] walks it once in
//! reverse. Learnable state lives in a [`ParamStore`] outside the tape so a
//! fresh tape can be built per step.

mod array;
mod params;
pub mod pgrw;
mod tape;

pub use array::{DType, NdArray, Real};
pub use params::{is_running_stat, BnStats, ParamEntry, ParamStore};
pub use tape::{Gradients, Tape, Var};

/// Batch-norm epsilon guarding the variance division.
pub const BN_EPS: f64 = 1e-5;
/// Weight kept on the old running statistic per training step.
pub const BN_MOMENTUM: f64 = 0.9;

#[derive(Debug, thiserror::Error)]
pub enum AdError {
    #[error("dimension mismatch: {0}")]
    Shape(String),
    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },
    #[error("cannot reduce over empty axis {axis} of shape {shape:?}")]
    EmptyAxis { axis: usize, shape: Vec<usize> },
    #[error("label {label} out of range [0, {classes})")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("backward needs a scalar loss, got shape {0:?}")]
    NotScalar(Vec<usize>),
    #[error("neighbor index {index} out of range for {points} points")]
    NeighborOutOfRange { index: usize, points: usize },
    #[error("unknown parameter `{0}`")]
    UnknownParam(String),
}
