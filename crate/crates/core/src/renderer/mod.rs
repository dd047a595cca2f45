//! Cameras, EWA projection and the tile-based splat rasterizer.
//!
//! Rendering is two stages: [`project`] maps 3D Gaussians to screen-space
//! [`Splat2D`]s, then [`rasterize`] sorts them front to back once for the whole
//! frame and composites 16×16 tiles in parallel. [`brute_force_render`] is
//! the slow reference used to check the tiled path.

mod camera;
mod image;
mod project;
mod raster;

pub use self::image::{linear_to_srgb, linear_to_srgb8, srgb8_to_linear, srgb_to_linear, Image};
pub use camera::{make_rig, rig_azimuths, Camera, Intrinsics, DEFAULT_NEAR, SENSOR_WIDTH_MM};
pub use project::{project, Projection, Splat2D, ALPHA_SKIP, COV_DILATION};
pub use raster::{
    brute_force_render, composite_pixel, depth_key, depth_order, rasterize, rasterize_detailed, splat_hit,
    Contribution, PixelResult, RenderOutput, SplatHit, SplatScene, ALPHA_MAX, TILE_SIZE,
    TRANSMITTANCE_MIN,
};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum RenderError {
    #[error("invalid camera: {0}")]
    InvalidCamera(String),
    #[error("invalid rig: {0}")]
    InvalidRig(String),
    #[error("camera json: {0}")]
    Json(String),
    #[error("png: {0}")]
    Png(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}
