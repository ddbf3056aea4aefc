//! Feature Gaussian splatting.
//!
//! Lifts per-view 2D feature maps into a set of 3D Gaussians carrying
//! low-dimensional feature vectors, renders multi-view consistent feature
//! images through a per-scene decoder, fine-tunes a 2D patch encoder on those
//! renders, and evaluates features with linear probes.

pub mod error;
pub mod extract;
pub mod gradcheck;
pub mod math;
pub mod probe;
pub mod raster;
pub mod scene;
pub mod synthetic;
pub mod train;

pub use error::{Error, Result};
pub use scene::{covariance_3d, CameraView, FeatureDecoder, FeatureImage, Gaussian3D, Scene, Splat2D};
