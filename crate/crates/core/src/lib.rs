//! UV-anchored animatable Gaussian avatars.
//!
//! The crate decodes Gaussian attribute maps laid out in the UV space of a
//! parametric body template into 3D Gaussian primitives, poses them with
//! linear blend skinning, renders them with a tile-based software splat
//! rasterizer and fits the color/opacity planes to multi-view images with
//! analytic gradients.
//!
//! Module map:
//! - [`template`]: body template container, shape blendshapes, forward kinematics.
//! - [`uvgauss`]: UV anchor sampling, attribute maps, Gaussian decoding.
//! - [`skinning`]: skinning-weight volume and LBS of Gaussians.
//! - [`renderer`]: cameras, EWA projection, tiled rasterizer and its brute-force oracle.
//! - [`avatar`]: the assembled avatar state and the full forward render path.
//! - [`fit`]: image metrics, color/opacity backward pass and the Adam fitting loop.
//! - [`ops`]: texture editing, shape editing and pose-sequence playback.

pub mod avatar;
pub mod container;
pub mod fit;
pub mod math;
pub mod ops;
pub mod renderer;
pub mod skinning;
pub mod template;
pub mod uvgauss;
pub mod weights;

pub use avatar::{Avatar, AvatarConfig};
pub use math::Quat;
pub use renderer::{Camera, Image};
pub use template::{BodyTemplate, JointTransforms, Pose, ShapeParams};
pub use uvgauss::{AnchorTable, GaussianAttributeMaps, GaussianSet};
pub use weights::JointWeights;

use thiserror::Error;

/// Crate-level error, wrapping the per-module error types.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Template(#[from] template::TemplateError),
    #[error(transparent)]
    Maps(#[from] uvgauss::MapsError),
    #[error(transparent)]
    Skinning(#[from] skinning::SkinningError),
    #[error(transparent)]
    Render(#[from] renderer::RenderError),
    #[error(transparent)]
    Fit(#[from] fit::FitError),
    #[error(transparent)]
    Ops(#[from] ops::OpsError),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
