//! Differentiable tri-grid neural volume renderer.
//!
//! A scene is three stacks of feature planes (a tri-grid) decoded by a tiny
//! MLP into density and radiance, volume-rendered with foreground/background
//! decomposition, and fitted to multi-view images by hand-written
//! reverse-mode gradients — including per-image camera residuals that absorb
//! pose and cropping noise. The crate also ships the two-stage detector
//! alignment, marching-cubes geometry extraction, an analytic synthetic-data
//! generator, and bit-exact PPM/PFM/manifest/checkpoint file formats.

pub mod align;
pub mod camera;
pub mod decoder;
pub mod error;
pub mod fit;
pub mod gradcheck;
pub mod grid;
pub mod io;
pub mod math;
pub mod mesh;
pub mod raster;
pub mod render;
pub mod scene;
pub mod synth;

pub use camera::{CameraResidual, OrbitCamera, Ray};
pub use error::{Error, Result};
pub use grid::{Bounds, TriGrid};
pub use raster::Raster;
pub use render::{RenderConfig, RenderOutput};
pub use scene::{Scene, SceneConfig, SceneGrads};
