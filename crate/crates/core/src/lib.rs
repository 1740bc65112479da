//! Hyperspectral single-image super-resolution with an auxiliary
//! unsupervised unmixing autoencoder.
//!
//! The crate is organized bottom-up:
//!
//! * [`tensor`]: dense `f64` tensors, reverse-mode differentiation, Adam.
//! * [`hsi`]: cubes, abundances, endmembers, the HSC1 file format, the
//!   synthetic scene generator and the HR→LR degradation operator.
//! * [`gram`]: the residual attention block shared by both networks.
//! * [`unmixing`]: the unmixing autoencoder and its loss.
//! * [`srnet`]: the super-resolution network and its loss.
//! * [`trainer`]: two-step training, patch sampling, checkpoints.
//! * [`metrics`]: PSNR, SSIM, SAM, ERGAS and endmember matching.

pub mod tensor;
pub mod hsi;
pub mod gram;
pub mod layers;
pub mod unmixing;
pub mod srnet;
pub mod metrics;
pub mod trainer;

use thiserror::Error;

/// Errors raised by the networks, their losses and evaluation.
#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Tensor(#[from] tensor::TensorError),
    #[error(transparent)]
    Hsi(#[from] hsi::HsiError),
}

pub type Result<T, E = ModelError> = std::result::Result<T, E>;
