//! HIPPD: hierarchical personality detection from user post histories.
//!
//! The pipeline stacks a pluggable semantic encoder, a prediction-error-modulated
//! gated working memory, and a pool of lightweight specialists selected by a
//! winner-take-all gating network. Everything runs on a small deterministic
//! tensor/autodiff core so the whole model trains on a desktop CPU.

#![allow(clippy::needless_range_loop)]

pub mod encoder;
pub mod error;
pub mod heads;
pub mod memory;
pub mod num;
pub mod pipeline;
pub mod routing;

pub use error::{Error, Result};
pub use num::scalar::Scalar;

/// Default scalar precision for the full pipeline.
pub type Real = f64;

/// Concrete tensor type used by the pipeline.
pub type Tensor = num::tensor::Tensor<Real>;

/// Forward-pass mode: training enables dropout and stochastic routing,
/// evaluation is fully deterministic.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}
