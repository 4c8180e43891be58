//! A small, fixed-architecture CNN stack written from scratch.
//!
//! Every layer exposes a forward pass and an exact backward pass. All code is
//! generic over [`Real`] so the same layers run in `f32` for training and in
//! `f64` for finite-difference gradient checks.

pub mod activation;
pub mod adam;
pub mod batchnorm;
pub mod conv;
pub mod gradcheck;
pub mod loss;
pub mod model_io;
pub mod network;
pub mod tensor;

pub use adam::{AdamConfig, AdamState};
pub use batchnorm::{BatchNorm2d, Mode};
pub use conv::Conv2d;
pub use network::{BitplaneNetwork, Head, NetworkMeta, ResidualBlock, TargetKind, WIDTH};
pub use tensor::{Real, Tensor};
