//! Bit-depth recovery by bitplane-wise residual reconstruction.
//!
//! A `q`-bit quantized image is missing its `N - q` least significant
//! bitplanes. This crate restores them one plane at a time: network `k`
//! sees the image quantized to `q + k - 1` bits and predicts bitplane
//! `N - (q + k)`, which is weighted by its significance and added back before
//! the next network runs.
//!
//! Module map:
//!
//! * [`bitcore`]: exact integer algebra (quantization, residuals, bitplanes).
//! * [`baselines`]: zero padding, ideal gain and bit replication.
//! * [`metrics`]: MSE, PSNR, SSIM and the evaluation report.
//! * [`net`]: a from-scratch CNN stack with exact backward passes and Adam.
//! * [`pipeline`]: training-pair generation, training, recovery, evaluation.
//! * [`io`]: PNG/PNM files, dataset manifests and the synthetic corpus.

pub mod baselines;
pub mod bitcore;
pub mod error;
pub mod io;
pub mod metrics;
pub mod net;
pub mod pipeline;

pub use bitcore::{Bitplane, ImageTensor, RecoveryRange, Role, Shape};
pub use error::{Error, Result};
