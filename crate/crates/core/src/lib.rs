//! Selective state-space co-speech gesture synthesis at desk scale.
//!
//! The numeric core ([`ndiff`], [`ssm`], [`attention`]) is generic over
//! [`Scalar`] (`f32` or `f64`). The pipeline modules built on top run in
//! `f64`.

pub mod attention;
pub mod checkpoint;
pub mod config;
pub mod corpus;
pub mod error;
pub mod metrics;
pub mod motion;
pub mod ndiff;
pub mod rng;
pub mod scalar;
pub mod ssm;
pub mod synthesis;

pub use error::{Error, FormatError, Result};
pub use rng::SeededRng;
pub use scalar::Scalar;

pub type Tensor64 = ndiff::Tensor<f64>;
pub type Tensor32 = ndiff::Tensor<f32>;
pub type Graph64<'p> = ndiff::Graph<'p, f64>;
pub type Graph32<'p> = ndiff::Graph<'p, f32>;
pub type ParamStore64 = ndiff::ParamStore<f64>;
pub type ParamStore32 = ndiff::ParamStore<f32>;
