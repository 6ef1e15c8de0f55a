//! Signed Gaussian splatting in two dimensions.
//!
//! The crate has two halves that share one idea, subtracting one Gaussian
//! from another:
//!
//! - [`distribution`] implements the Diff-Gaussian density
//!   `(f0 - c f1) / (1 - c)`: evaluation, the largest admissible balance
//!   coefficient, the affine set of density roots, rejection sampling and a
//!   grid quadrature used as a test oracle.
//! - [`splat`], [`render`] and [`optim`] implement a differentiable 2D
//!   splatting renderer whose primitives may carry negative color, and fit it
//!   to target images with Adam, pruning and densification.
//!
//! [`metrics`] provides PSNR and windowed SSIM (with its gradient), [`image`]
//! the RGB buffer and PPM codec, and [`targets`] procedural test images.

pub mod distribution;
pub mod error;
pub mod image;
pub mod metrics;
pub mod optim;
pub mod render;
pub mod splat;
pub mod targets;

pub use error::{Error, Result};
pub use image::Image;
