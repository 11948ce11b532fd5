//! Training-optimization benchmark suite.
//!
//! A small convolutional network engine, nine optimizers written from their
//! update rules, dataset ingestion and augmentation, and an experiment harness
//! for multistart studies, grid searches, and success-rate performance
//! profiles.
//!
//! The numeric core is generic over [`Real`] (`f32` or `f64`); the aliases
//! below fix the scalar for the common cases. The experiment harness runs in
//! `f64`.

pub mod bench;
pub mod cli;
pub mod data;
pub mod error;
pub mod nn;
pub mod optim;
pub mod rng;
pub mod scalar;
pub mod tensor;
pub mod verify;

pub use error::{Error, Result};
pub use rng::{init_tensor, InitializerKind, Rng};
pub use scalar::Real;
pub use tensor::{flatten_params, unflatten_params, BinaryOp, ParamSet, Tensor};

pub type Tensor64 = Tensor<f64>;
pub type Tensor32 = Tensor<f32>;
pub type ParamSet64 = ParamSet<f64>;
pub type ParamSet32 = ParamSet<f32>;
pub type Network64 = nn::Network<f64>;
pub type Network32 = nn::Network<f32>;
