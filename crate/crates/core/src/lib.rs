//! Photo-realistic single-image super-resolution: a residual generator trained
//! with pixel or feature-space content losses, optionally against a
//! convolutional discriminator, plus the classical baselines and the
//! y-channel PSNR/SSIM evaluation protocol used to compare them.
//!
//! Everything runs on the CPU in plain Rust. Operators are implemented with
//! explicit forward/backward passes over the fixed feed-forward graphs of the
//! networks, so the gradient of every building block can be verified against
//! central finite differences (see [`nn_ops::gradcheck`]).

pub mod error;
pub mod image_pipeline;
pub mod losses;
pub mod metrics;
pub mod models;
pub mod nn_ops;
pub mod trainer;

pub use error::{Error, Result};
pub use nn_ops::{Float, Tensor};
