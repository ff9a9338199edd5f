//! Certified cost-sensitive robustness for ReLU classifiers.
//!
//! The crate computes dual lower bounds on logit margins over ℓ∞ balls,
//! turns them into per-example certificates and pairwise robust-error grids,
//! and trains networks against robust losses that weight each
//! (true class, adversarial target) pair by a cost matrix.
//!
//! All numerics are generic over [`numcore::Scalar`] (`f32` or `f64`); the
//! aliases below fix the usual choice.

mod error;

pub mod certify;
pub mod cost;
pub mod data;
pub mod model;
pub mod numcore;
pub mod train;

pub use error::{Error, Result};

pub type Tensor64 = numcore::Tensor<f64>;
pub type Tensor32 = numcore::Tensor<f32>;
pub type Network64 = model::Network<f64>;
pub type Network32 = model::Network<f32>;
pub type Dataset64 = data::Dataset<f64>;
pub type Dataset32 = data::Dataset<f32>;
