//! Restoration of frequency-resolved amplitude image cubes degraded by
//! frequency-dependent blur and noise.
//!
//! The pipeline transforms time-domain scans into spectral cubes, compresses
//! the spectral axis with PCA, restores the leading component images with a
//! pair of self-supervised networks (denoiser then deblurrer, trained on
//! recorrupted pairs), and reconstructs the cube.

pub mod cube;
pub mod error;
pub mod forward;
pub mod grid;
pub mod linalg;
pub mod metrics;
pub mod nnet;
pub mod pca;
pub mod psf;
pub mod r2r;
pub mod rng;
pub mod spectral;

pub use error::{Error, Result};
