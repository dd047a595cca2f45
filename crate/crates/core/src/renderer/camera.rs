use super::RenderError;
use crate::math::{linear_part, orthonormality_residual, transform_point, Mat3, Mat4, Vec3};
use serde::{Deserialize, Serialize};
use std::path::Path;

pub const DEFAULT_NEAR: f64 = 0.01;
/// Width of the full-frame sensor used to convert focal lengths in millimetres.
pub const SENSOR_WIDTH_MM: f64 = 36.0;
const RIGID_TOLERANCE: f64 = 1e-5;

/// Pinhole intrinsics shared by every camera of a rig.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
    pub near: f64,
}

impl Intrinsics {
    /// Square pixels, principal point at the image center.
    pub fn from_focal_mm(focal_mm: f64, width: u32, height: u32) -> Self {
        let f = focal_mm / SENSOR_WIDTH_MM * width as f64;
        Intrinsics {
            fx: f,
            fy: f,
            cx: (width as f64 - 1.0) / 2.0,
            cy: (height as f64 - 1.0) / 2.0,
            width,
            height,
            near: DEFAULT_NEAR,
        }
    }
}

/// Perspective camera. Camera space is x right, y down, z forward.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(from = "CameraFile", into = "CameraFile")]
pub struct Camera {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
    pub near: f64,
    pub world_to_cam: Mat4,
}

#[derive(Serialize, Deserialize)]
struct CameraFile {
    fx: f64,
    fy: f64,
    cx: f64,
    cy: f64,
    width: u32,
    height: u32,
    #[serde(default = "default_near")]
    near: f64,
    world_to_cam: [f64; 16],
}

fn default_near() -> f64 {
    DEFAULT_NEAR
}

impl From<CameraFile> for Camera {
    fn from(f: CameraFile) -> Self {
        Camera {
            fx: f.fx,
            fy: f.fy,
            cx: f.cx,
            cy: f.cy,
            width: f.width,
            height: f.height,
            near: f.near,
            world_to_cam: Mat4::from_row_slice(&f.world_to_cam),
        }
    }
}

impl From<Camera> for CameraFile {
    fn from(c: Camera) -> Self {
        let mut m = [0.0; 16];
        for r in 0..4 {
            for col in 0..4 {
                m[r * 4 + col] = c.world_to_cam[(r, col)];
            }
        }
        CameraFile {
            fx: c.fx,
            fy: c.fy,
            cx: c.cx,
            cy: c.cy,
            width: c.width,
            height: c.height,
            near: c.near,
            world_to_cam: m,
        }
    }
}

impl Camera {
    pub fn new(intrinsics: Intrinsics, world_to_cam: Mat4) -> Self {
        Camera {
            fx: intrinsics.fx,
            fy: intrinsics.fy,
            cx: intrinsics.cx,
            cy: intrinsics.cy,
            width: intrinsics.width,
            height: intrinsics.height,
            near: intrinsics.near,
            world_to_cam,
        }
    }

    pub fn intrinsics(&self) -> Intrinsics {
        Intrinsics {
            fx: self.fx,
            fy: self.fy,
            cx: self.cx,
            cy: self.cy,
            width: self.width,
            height: self.height,
            near: self.near,
        }
    }

    /// Camera at `eye` looking at `target` with world +y as up.
    pub fn look_at(eye: Vec3, target: Vec3, intrinsics: Intrinsics) -> Self {
        Camera::new(intrinsics, look_at_matrix(eye, target))
    }

    /// Same camera at another resolution, focal lengths and principal point scaled.
    pub fn resized(&self, width: u32, height: u32) -> Self {
        let sx = width as f64 / self.width as f64;
        let sy = height as f64 / self.height as f64;
        Camera {
            fx: self.fx * sx,
            fy: self.fy * sy,
            cx: (self.cx + 0.5) * sx - 0.5,
            cy: (self.cy + 0.5) * sy - 0.5,
            width,
            height,
            ..self.clone()
        }
    }

    pub fn center(&self) -> Vec3 {
        let r = linear_part(&self.world_to_cam);
        let t = Vec3::new(
            self.world_to_cam[(0, 3)],
            self.world_to_cam[(1, 3)],
            self.world_to_cam[(2, 3)],
        );
        -(r.transpose() * t)
    }

    pub fn to_camera(&self, p: &Vec3) -> Vec3 {
        transform_point(&self.world_to_cam, p)
    }

    pub fn validate(&self) -> Result<(), RenderError> {
        let bad = |m: String| Err(RenderError::InvalidCamera(m));
        if !(self.fx > 0.0 && self.fy > 0.0 && self.fx.is_finite() && self.fy.is_finite()) {
            return bad(format!("focal lengths must be positive, got fx={} fy={}", self.fx, self.fy));
        }
        if self.width == 0 || self.height == 0 {
            return bad(format!("image size must be at least 1x1, got {}x{}", self.width, self.height));
        }
        if !(self.near > 0.0 && self.near.is_finite()) {
            return bad(format!("near plane must be positive, got {}", self.near));
        }
        if !(self.cx.is_finite() && self.cy.is_finite()) {
            return bad("principal point is not finite".into());
        }
        let r: Mat3 = linear_part(&self.world_to_cam);
        let residual = orthonormality_residual(&r);
        let det = r.determinant();
        let bottom = self.world_to_cam.row(3);
        if !(residual <= RIGID_TOLERANCE && (det - 1.0).abs() <= RIGID_TOLERANCE)
            || bottom[0] != 0.0
            || bottom[1] != 0.0
            || bottom[2] != 0.0
            || bottom[3] != 1.0
            || !self.world_to_cam.iter().all(|v| v.is_finite())
        {
            return bad(format!("world_to_cam is not rigid (residual {residual:.2e}, det {det})"));
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self, RenderError> {
        let cam: Camera = serde_json::from_str(text).map_err(|e| RenderError::Json(e.to_string()))?;
        cam.validate()?;
        Ok(cam)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("camera serializes")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, RenderError> {
        let text = std::fs::read_to_string(path.as_ref()).map_err(|source| RenderError::Io {
            path: path.as_ref().display().to_string(),
            source,
        })?;
        Self::from_json(&text).map_err(|e| match e {
            RenderError::Json(m) | RenderError::InvalidCamera(m) => {
                RenderError::InvalidCamera(format!("{}: {m}", path.as_ref().display()))
            }
            other => other,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), RenderError> {
        std::fs::write(path.as_ref(), self.to_json()).map_err(|source| RenderError::Io {
            path: path.as_ref().display().to_string(),
            source,
        })
    }
}

fn look_at_matrix(eye: Vec3, target: Vec3) -> Mat4 {
    let forward = (target - eye).normalize();
    let mut right = forward.cross(&Vec3::y());
    if right.norm() < 1e-9 {
        // Looking straight up or down: pick screen-right along world +x.
        right = Vec3::x();
    }
    let right = right.normalize();
    let down = forward.cross(&right);
    let r = Mat3::from_rows(&[right.transpose(), down.transpose(), forward.transpose()]);
    crate::math::rigid(&r, &(-(r * eye)))
}

/// Azimuths in degrees, `k·360/n` for `k = 0..n`.
pub fn rig_azimuths(n_views: usize) -> Vec<f64> {
    (0..n_views).map(|k| 360.0 * k as f64 / n_views as f64).collect()
}

/// Ring of cameras around `target`, azimuth 0 on the +z side, all looking at
/// the target with identical intrinsics.
pub fn make_rig(
    n_views: usize,
    elevation_deg: f64,
    radius: f64,
    target: Vec3,
    intrinsics: Intrinsics,
) -> Result<Vec<Camera>, RenderError> {
    if n_views == 0 {
        return Err(RenderError::InvalidRig("n_views must be at least 1".into()));
    }
    if !(radius > 0.0 && radius.is_finite()) {
        return Err(RenderError::InvalidRig(format!("radius must be positive, got {radius}")));
    }
    let el = elevation_deg.to_radians();
    Ok(rig_azimuths(n_views)
        .into_iter()
        .map(|az| {
            let az = az.to_radians();
            let eye = target + radius * Vec3::new(el.cos() * az.sin(), el.sin(), el.cos() * az.cos());
            Camera::look_at(eye, target, intrinsics)
        })
        .collect())
}
