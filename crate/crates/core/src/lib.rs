//! Latent radiance field toolkit: a differentiable C-channel Gaussian
//! splatting renderer and optimizer, plus the correspondence-geometry and
//! decoder-alignment losses that surround it.
//!
//! Scenes hold latent Gaussians whose per-primitive appearance is a C-channel
//! feature vector (degree-3 spherical harmonics per channel) instead of RGB.
//! The rasterizer, its analytic backward pass, the training loop, and all
//! losses operate on latent maps supplied as files; no encoder or decoder
//! network is trained here beyond the small patch-linear alignment decoder.

pub mod align;
pub mod error;
pub mod geometry;
pub mod grad;
pub mod latent;
pub mod losses;
pub mod metrics;
pub mod oracle;
pub mod ply;
pub mod render;
pub mod scene;
pub mod sh;
pub mod ssim;
pub mod train;

pub use error::{LrfError, Result};
