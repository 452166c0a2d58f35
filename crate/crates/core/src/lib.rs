//! Synthetic motion/shake/defocus blur generation and adversarial image
//! restoration on a small deterministic autodiff engine.
//!
//! Numeric code is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below fix the precision used by the command-line tools.

pub mod degrade;
pub mod error;
pub mod eval;
pub mod loss;
pub mod model;
pub mod psf;
pub mod raster;
pub mod scalar;
pub mod seed;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Default working precision (64-bit unless built with `single-precision`).
#[cfg(not(feature = "single-precision"))]
pub type Real = f64;
#[cfg(feature = "single-precision")]
pub type Real = f32;

pub type Tensor64 = tensor::Tensor<f64>;
pub type Tensor32 = tensor::Tensor<f32>;

pub type Kernel64 = psf::Kernel<f64>;
pub type Kernel32 = psf::Kernel<f32>;

pub type Image64 = raster::Image<f64>;
pub type Image32 = raster::Image<f32>;
