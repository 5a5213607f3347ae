//! Learned adaptive sample placement along camera rays for a small
//! differentiable radiance field.
//!
//! The numerical core is generic over the scalar type ([`Real`]); the
//! pipeline runs in single precision through the `*32` aliases below.

pub mod baselines;
pub mod diff;
pub mod env;
pub mod field;
pub mod image;
pub mod nn;
pub mod pipeline;
pub mod render;
pub mod sac;
pub mod scenes;
pub mod scalar;

pub use scalar::Real;

pub type Tensor32 = diff::Tensor<f32>;
pub type Tensor64 = diff::Tensor<f64>;
pub type Graph32 = diff::Graph<f32>;
pub type ParamStore32 = diff::ParamStore<f32>;
