//! Desk-scale laboratory for studying neural collapse geometry under
//! standard, adversarial, and TRADES training.
//!
//! The crate is generic over the floating-point scalar (see [`scalar::Scalar`]);
//! the aliases below pin the `f64` instantiation that all experiments use.

pub mod attacks;
pub mod checkpoint;
pub mod config;
pub mod data;
pub mod error;
pub mod experiment;
pub mod linalg;
pub mod models;
pub mod nc;
pub mod scalar;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Default scalar type for experiments.
pub type S = f64;

pub type Tensor64 = tensor::Tensor<f64>;
pub type Tensor32 = tensor::Tensor<f32>;
pub type Network64 = models::Network<f64>;
pub type Mat64 = linalg::Mat<f64>;
