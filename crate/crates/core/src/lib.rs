//! Core of the in-generation Gaussian-splat watermarking pipeline.

pub mod error;
pub mod gaussians;
pub mod math;
pub mod nets;
pub mod renderer;
pub mod robust;
pub mod seal;
pub mod toolkit;
pub mod wavelet;

pub use error::{Error, Result};
