//! Assembled avatar: template, shape, anchors, weight volume and attribute maps.

use crate::math::Vec3;
use crate::renderer::{project, rasterize, rasterize_detailed, Camera, Image, Projection, RenderOutput};
use crate::skinning::{
    attach_weights, build_weight_volume, query_weights, skin_gaussians, SkinReport, WeightVolume,
    DEFAULT_VOLUME_RES,
};
use crate::template::{BodyTemplate, Pose, ShapeParams};
use crate::uvgauss::{
    build_anchor_table, decode_gaussians, default_maps, AnchorTable, GaussianAttributeMaps,
    GaussianSet, MapsError,
};
use crate::Result;
use std::sync::Arc;

pub const DEFAULT_UV_RES: u32 = 256;
pub const NEUTRAL_GRAY: [f32; 3] = [0.5, 0.5, 0.5];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AvatarConfig {
    /// Attribute-map resolution used when building neutral maps.
    pub uv_resolution: u32,
    pub volume_resolution: [usize; 3],
}

impl Default for AvatarConfig {
    fn default() -> Self {
        AvatarConfig {
            uv_resolution: DEFAULT_UV_RES,
            volume_resolution: [DEFAULT_VOLUME_RES; 3],
        }
    }
}

/// Everything needed to render. Anchors and the weight volume depend only on
/// template and shape, so they are shared between clones.
#[derive(Clone, Debug)]
pub struct Avatar {
    template: Arc<BodyTemplate>,
    config: AvatarConfig,
    shape: ShapeParams,
    shaped: Arc<Vec<Vec3>>,
    anchors: Arc<AnchorTable>,
    volume: Arc<WeightVolume>,
    pub maps: GaussianAttributeMaps,
}

impl Avatar {
    /// Avatar over existing attribute maps; anchors are built at the maps' resolution.
    pub fn new(
        template: Arc<BodyTemplate>,
        maps: GaussianAttributeMaps,
        shape: ShapeParams,
        config: AvatarConfig,
    ) -> Result<Self> {
        maps.check_plane_sizes()?;
        let shaped = template.apply_shape(&shape)?;
        let anchors = build_anchor_table(&template, &shaped, maps.width, maps.height);
        let volume = build_weight_volume(&template, &shaped, config.volume_resolution)?;
        Ok(Avatar {
            template,
            config,
            shape,
            shaped: Arc::new(shaped),
            anchors: Arc::new(anchors),
            volume: Arc::new(volume),
            maps,
        })
    }

    /// Zero shape, identity offsets, uniform color.
    pub fn neutral(template: Arc<BodyTemplate>, config: AvatarConfig, color: [f32; 3]) -> Result<Self> {
        let shape = ShapeParams::zeros(template.shape_count());
        let shaped = template.apply_shape(&shape)?;
        let anchors = build_anchor_table(&template, &shaped, config.uv_resolution, config.uv_resolution);
        let maps = default_maps(&anchors, color);
        let volume = build_weight_volume(&template, &shaped, config.volume_resolution)?;
        Ok(Avatar {
            template,
            config,
            shape,
            shaped: Arc::new(shaped),
            anchors: Arc::new(anchors),
            volume: Arc::new(volume),
            maps,
        })
    }

    pub fn template(&self) -> &Arc<BodyTemplate> {
        &self.template
    }

    pub fn config(&self) -> AvatarConfig {
        self.config
    }

    pub fn shape(&self) -> &ShapeParams {
        &self.shape
    }

    pub fn shaped_vertices(&self) -> &[Vec3] {
        &self.shaped
    }

    pub fn anchors(&self) -> &AnchorTable {
        &self.anchors
    }

    pub fn volume(&self) -> &WeightVolume {
        &self.volume
    }

    pub fn joint_count(&self) -> usize {
        self.template.joint_count()
    }

    /// Re-shape: anchors and volume are rebuilt on the new surface, maps are kept.
    pub fn with_shape(&self, shape: ShapeParams) -> Result<Self> {
        let shaped = self.template.apply_shape(&shape)?;
        if shaped == *self.shaped {
            return Ok(Avatar { shape, ..self.clone() });
        }
        let anchors = build_anchor_table(&self.template, &shaped, self.maps.width, self.maps.height);
        let volume = build_weight_volume(&self.template, &shaped, self.config.volume_resolution)?;
        Ok(Avatar {
            shape,
            shaped: Arc::new(shaped),
            anchors: Arc::new(anchors),
            volume: Arc::new(volume),
            ..self.clone()
        })
    }

    /// Texels whose mask disagrees with anchor coverage.
    pub fn mask_mismatches(&self) -> usize {
        self.anchors
            .mask()
            .iter()
            .zip(&self.maps.mask)
            .filter(|(a, b)| (**a != 0) != (**b != 0))
            .count()
    }

    /// Decoded Gaussians in canonical space with their skinning weights.
    pub fn canonical_gaussians(&self) -> Result<GaussianSet> {
        let mut set = decode_gaussians(&self.anchors, &self.maps)?;
        let weights = query_weights(&self.volume, &self.anchors, &set)?;
        attach_weights(&mut set, weights);
        Ok(set)
    }

    /// Skin canonical Gaussians with `pose`.
    pub fn pose_gaussians(&self, canonical: &GaussianSet, pose: &Pose) -> Result<(GaussianSet, SkinReport)> {
        let transforms = self.template.forward_kinematics(pose)?;
        Ok(skin_gaussians(canonical, &transforms)?)
    }

    pub fn posed(&self, pose: &Pose) -> Result<(GaussianSet, SkinReport)> {
        self.pose_gaussians(&self.canonical_gaussians()?, pose)
    }

    pub fn project_posed(&self, pose: &Pose, camera: &Camera) -> Result<Projection> {
        camera.validate()?;
        let (posed, _) = self.posed(pose)?;
        Ok(project(camera, &posed))
    }

    /// decode → weights → FK → skin → project → rasterize.
    pub fn render(&self, pose: &Pose, camera: &Camera, background: [f64; 3]) -> Result<Image> {
        let projection = self.project_posed(pose, camera)?;
        Ok(rasterize(&projection.splats, camera, background))
    }

    pub fn render_detailed(&self, pose: &Pose, camera: &Camera, background: [f64; 3]) -> Result<RenderOutput> {
        let projection = self.project_posed(pose, camera)?;
        Ok(rasterize_detailed(&projection.splats, camera, background))
    }

    /// Render decoded Gaussians without skinning.
    pub fn render_canonical(&self, camera: &Camera, background: [f64; 3]) -> Result<Image> {
        camera.validate()?;
        let set = self.canonical_gaussians()?;
        Ok(rasterize(&project(camera, &set).splats, camera, background))
    }

    pub fn identity_pose(&self) -> Pose {
        Pose::identity(self.joint_count())
    }

    /// Center of the shaped template's bounding box.
    pub fn center(&self) -> Vec3 {
        let (lo, hi) = BodyTemplate::bounds(&self.shaped).expect("template has vertices");
        (lo + hi) * 0.5
    }

    /// Largest bounding-box extent of the shaped template.
    pub fn extent(&self) -> f64 {
        let (lo, hi) = BodyTemplate::bounds(&self.shaped).expect("template has vertices");
        (hi - lo).max()
    }

    /// Replace the maps, keeping geometry. Resolution must match.
    pub fn set_maps(&mut self, maps: GaussianAttributeMaps) -> Result<()> {
        if (maps.width, maps.height) != (self.maps.width, self.maps.height) {
            return Err(MapsError::ResolutionMismatch {
                maps: (maps.width, maps.height),
                anchors: (self.maps.width, self.maps.height),
            }
            .into());
        }
        maps.check_plane_sizes()?;
        self.maps = maps;
        Ok(())
    }
}
