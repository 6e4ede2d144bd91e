//! Registration of a scaled 3D point cloud and per-frame oriented 2D
//! contours to a triangle mesh by maximizing match likelihoods under
//! anisotropic Gaussian and von Mises noise models.

pub mod camera;
pub mod correspondence;
pub mod error;
pub mod features;
pub mod formats;
pub mod geometry;
pub mod mesh;
pub mod registration;
pub mod render;
mod serde_util;
pub mod stats;
pub mod synthetic;

pub use error::{Error, Result};
