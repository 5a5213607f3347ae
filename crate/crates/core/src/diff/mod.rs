//! Reverse-mode automatic differentiation over dense tensors, plus Adam.

mod adam;
mod gradcheck;
mod graph;
mod params;
mod tensor;

pub use adam::{Adam, AdamConfig};
pub use gradcheck::{gradient_check, GradCheckConfig, GradCheckReport, Objective};
pub use graph::{Graph, Var, LAYER_NORM_EPS};
pub use params::{polyak_update, Param, ParamId, ParamStore};
pub use tensor::Tensor;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DiffError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite value produced by {0}")]
    NonFinite(String),
    #[error("non-finite gradient for parameter {0}")]
    NonFiniteGradient(String),
}
