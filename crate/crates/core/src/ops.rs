//! Texture editing, shape editing and pose-sequence playback.

use crate::avatar::Avatar;
use crate::math::{Quat, Vec3};
use crate::renderer::{project, rasterize, srgb8_to_linear, Camera, Image};
use crate::template::{BodyTemplate, Pose, ShapeParams};
use crate::uvgauss::GaussianAttributeMaps;
use crate::Result;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum OpsError {
    #[error("invalid UV rectangle {0:?}: need 0 <= u0 < u1 <= 1 and 0 <= v0 < v1 <= 1")]
    InvalidRect([f64; 4]),
    #[error("invalid texture patch: {0}")]
    InvalidPatch(String),
    #[error("invalid pose sequence: {0}")]
    PoseSequence(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Target rectangle in UV space.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct UvRect {
    pub u0: f64,
    pub v0: f64,
    pub u1: f64,
    pub v1: f64,
}

impl UvRect {
    pub const FULL: UvRect = UvRect { u0: 0.0, v0: 0.0, u1: 1.0, v1: 1.0 };

    pub fn new(u0: f64, v0: f64, u1: f64, v1: f64) -> Result<Self, OpsError> {
        let r = UvRect { u0, v0, u1, v1 };
        r.validate()?;
        Ok(r)
    }

    pub fn validate(&self) -> Result<(), OpsError> {
        let in_unit = |a: f64| (0.0..=1.0).contains(&a);
        let ok = [self.u0, self.v0, self.u1, self.v1].iter().all(|&a| in_unit(a))
            && self.u0 < self.u1
            && self.v0 < self.v1;
        if ok {
            Ok(())
        } else {
            Err(OpsError::InvalidRect([self.u0, self.v0, self.u1, self.v1]))
        }
    }
}

/// Straight-alpha RGBA raster in linear RGB, placed over a UV rectangle.
#[derive(Clone, Debug, PartialEq)]
pub struct TexturePatch {
    pub width: u32,
    pub height: u32,
    pub rgba: Vec<[f32; 4]>,
    pub rect: UvRect,
}

impl TexturePatch {
    pub fn new(width: u32, height: u32, rgba: Vec<[f32; 4]>, rect: UvRect) -> Result<Self, OpsError> {
        let p = TexturePatch { width, height, rgba, rect };
        p.validate()?;
        Ok(p)
    }

    pub fn solid(rgba: [f32; 4], rect: UvRect) -> Result<Self, OpsError> {
        Self::new(1, 1, vec![rgba], rect)
    }

    pub fn validate(&self) -> Result<(), OpsError> {
        self.rect.validate()?;
        if self.width == 0 || self.height == 0 {
            return Err(OpsError::InvalidPatch("empty raster".into()));
        }
        if self.rgba.len() != self.width as usize * self.height as usize {
            return Err(OpsError::InvalidPatch(format!(
                "{} pixels for a {}x{} raster",
                self.rgba.len(),
                self.width,
                self.height
            )));
        }
        if !self.rgba.iter().all(|p| p.iter().all(|v| v.is_finite()) && (0.0..=1.0).contains(&p[3])) {
            return Err(OpsError::InvalidPatch("alpha outside [0,1] or non-finite values".into()));
        }
        Ok(())
    }

    /// Decode a PNG; color channels are sRGB-decoded to linear, alpha is kept linear.
    pub fn from_png(bytes: &[u8], rect: UvRect) -> Result<Self, OpsError> {
        let img = image::load_from_memory_with_format(bytes, image::ImageFormat::Png)
            .map_err(|e| OpsError::InvalidPatch(e.to_string()))?
            .to_rgba8();
        let rgba = img
            .pixels()
            .map(|p| {
                [
                    srgb8_to_linear(p[0]) as f32,
                    srgb8_to_linear(p[1]) as f32,
                    srgb8_to_linear(p[2]) as f32,
                    p[3] as f32 / 255.0,
                ]
            })
            .collect();
        Self::new(img.width(), img.height(), rgba, rect)
    }

    pub fn load_png(path: impl AsRef<Path>, rect: UvRect) -> Result<Self, OpsError> {
        let bytes = std::fs::read(path.as_ref()).map_err(|source| OpsError::Io {
            path: path.as_ref().display().to_string(),
            source,
        })?;
        Self::from_png(&bytes, rect)
    }

    /// Bilinear sample at patch-local coordinates in `[0,1]²`, clamped at the edges.
    fn sample(&self, s: f64, t: f64) -> [f64; 4] {
        let fx = (s * self.width as f64 - 0.5).clamp(0.0, (self.width - 1) as f64);
        let fy = (t * self.height as f64 - 0.5).clamp(0.0, (self.height - 1) as f64);
        let (x0, y0) = (fx.floor() as usize, fy.floor() as usize);
        let x1 = (x0 + 1).min(self.width as usize - 1);
        let y1 = (y0 + 1).min(self.height as usize - 1);
        let (tx, ty) = (fx - x0 as f64, fy - y0 as f64);
        let px = |x: usize, y: usize| self.rgba[y * self.width as usize + x].map(|v| v as f64);
        let (a, b, c, d) = (px(x0, y0), px(x1, y0), px(x0, y1), px(x1, y1));
        // Lerp form keeps constant regions exact.
        let lerp = |p: f64, q: f64, t: f64| p + (q - p) * t;
        std::array::from_fn(|k| lerp(lerp(a[k], b[k], tx), lerp(c[k], d[k], tx), ty))
    }
}

/// Blend `patch` over the color plane. A texel is covered when its center
/// `((x+0.5)/W, (y+0.5)/H)` lies in `[u0,u1) × [v0,v1)`.
pub fn edit_texture(maps: &GaussianAttributeMaps, patch: &TexturePatch) -> Result<GaussianAttributeMaps, OpsError> {
    patch.validate()?;
    let mut out = maps.clone();
    let (w, h) = (maps.width as usize, maps.height as usize);
    let r = patch.rect;
    for y in 0..h {
        let v = (y as f64 + 0.5) / h as f64;
        if !(r.v0 <= v && v < r.v1) {
            continue;
        }
        for x in 0..w {
            let u = (x as f64 + 0.5) / w as f64;
            if !(r.u0 <= u && u < r.u1) {
                continue;
            }
            let p = patch.sample((u - r.u0) / (r.u1 - r.u0), (v - r.v0) / (r.v1 - r.v0));
            let a = p[3];
            if a == 0.0 {
                continue;
            }
            let c = &mut out.color[y * w + x];
            for k in 0..3 {
                c[k] = (a * p[k] + (1.0 - a) * c[k] as f64) as f32;
            }
        }
    }
    Ok(out)
}

/// New avatar state with shape `beta`; maps are carried over unchanged.
pub fn edit_shape(avatar: &Avatar, beta: ShapeParams) -> Result<Avatar> {
    avatar.with_shape(beta)
}

/// Poses in template joint order with a playback rate.
#[derive(Clone, Debug, PartialEq)]
pub struct PoseSequence {
    pub fps: f64,
    pub joint_names: Vec<String>,
    pub frames: Vec<Pose>,
}

#[derive(Serialize, Deserialize)]
struct SequenceFile {
    fps: f64,
    joint_names: Vec<String>,
    frames: Vec<FrameFile>,
}

#[derive(Serialize, Deserialize)]
struct FrameFile {
    root_t: [f64; 3],
    /// `[w,x,y,z]` quaternions, or 3-element axis-angle vectors.
    rot: Vec<Vec<f64>>,
}

impl PoseSequence {
    pub fn constant(template: &BodyTemplate, pose: Pose, frames: usize, fps: f64) -> Self {
        PoseSequence {
            fps,
            joint_names: template.joint_names.clone(),
            frames: vec![pose; frames],
        }
    }

    pub fn validate(&self, template: &BodyTemplate) -> Result<(), OpsError> {
        if self.frames.is_empty() {
            return Err(OpsError::PoseSequence("no frames".into()));
        }
        if !(self.fps > 0.0 && self.fps.is_finite()) {
            return Err(OpsError::PoseSequence(format!("fps must be positive, got {}", self.fps)));
        }
        if self.joint_names != template.joint_names {
            return Err(OpsError::PoseSequence("joint order does not match the template".into()));
        }
        for (i, f) in self.frames.iter().enumerate() {
            f.validate(template.joint_count())
                .map_err(|e| OpsError::PoseSequence(format!("frame {i}: {e}")))?;
        }
        Ok(())
    }

    /// Parse `.pose.json`, reordering joints by name into template order.
    /// Joints absent from the file keep the identity rotation.
    pub fn from_json(text: &str, template: &BodyTemplate) -> Result<Self, OpsError> {
        let file: SequenceFile =
            serde_json::from_str(text).map_err(|e| OpsError::PoseSequence(e.to_string()))?;
        let index: HashMap<&str, usize> = template
            .joint_names
            .iter()
            .enumerate()
            .map(|(i, n)| (n.as_str(), i))
            .collect();
        let mut slots = Vec::with_capacity(file.joint_names.len());
        for name in &file.joint_names {
            let slot = index
                .get(name.as_str())
                .ok_or_else(|| OpsError::PoseSequence(format!("unknown joint {name:?}")))?;
            slots.push(*slot);
        }
        let mut frames = Vec::with_capacity(file.frames.len());
        for (fi, f) in file.frames.iter().enumerate() {
            if f.rot.len() != slots.len() {
                return Err(OpsError::PoseSequence(format!(
                    "frame {fi}: {} rotations for {} joint names",
                    f.rot.len(),
                    slots.len()
                )));
            }
            let mut pose = Pose::identity(template.joint_count());
            pose.root_translation = Vec3::from(f.root_t);
            for (r, &slot) in f.rot.iter().zip(&slots) {
                pose.joint_rotations[slot] = match *r.as_slice() {
                    [w, x, y, z] => Quat::new(w, x, y, z),
                    [x, y, z] => Quat::from_rotation_vector(Vec3::new(x, y, z)),
                    _ => {
                        return Err(OpsError::PoseSequence(format!(
                            "frame {fi}: rotation needs 4 (quaternion) or 3 (axis-angle) numbers"
                        )))
                    }
                };
            }
            frames.push(pose);
        }
        let seq = PoseSequence {
            fps: file.fps,
            joint_names: template.joint_names.clone(),
            frames,
        };
        seq.validate(template)?;
        Ok(seq)
    }

    pub fn to_json(&self) -> String {
        let file = SequenceFile {
            fps: self.fps,
            joint_names: self.joint_names.clone(),
            frames: self
                .frames
                .iter()
                .map(|p| FrameFile {
                    root_t: p.root_translation.into(),
                    rot: p.joint_rotations.iter().map(|q| q.to_array().to_vec()).collect(),
                })
                .collect(),
        };
        serde_json::to_string_pretty(&file).expect("pose sequence serializes")
    }

    pub fn load(path: impl AsRef<Path>, template: &BodyTemplate) -> Result<Self, OpsError> {
        let text = std::fs::read_to_string(path.as_ref()).map_err(|source| OpsError::Io {
            path: path.as_ref().display().to_string(),
            source,
        })?;
        Self::from_json(&text, template)
    }
}

/// Render every frame. Canonical Gaussians and weights are computed once.
pub fn animate(avatar: &Avatar, seq: &PoseSequence, camera: &Camera, background: [f64; 3]) -> Result<Vec<Image>> {
    seq.validate(avatar.template())?;
    camera.validate()?;
    let canonical = avatar.canonical_gaussians()?;
    seq.frames
        .iter()
        .map(|pose| {
            let (posed, _) = avatar.pose_gaussians(&canonical, pose)?;
            Ok(rasterize(&project(camera, &posed).splats, camera, background))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::avatar::{AvatarConfig, NEUTRAL_GRAY};
    use crate::renderer::{make_rig, Intrinsics};
    use crate::template::{toy_humanoid, Region};
    use std::sync::Arc;

    fn small() -> Avatar {
        let config = AvatarConfig { uv_resolution: 48, volume_resolution: [12; 3] };
        Avatar::neutral(Arc::new(toy_humanoid()), config, NEUTRAL_GRAY).unwrap()
    }

    fn front(a: &Avatar, size: u32) -> Camera {
        make_rig(1, 0.0, 3.0, a.center(), Intrinsics::from_focal_mm(50.0, size, size)).unwrap().remove(0)
    }

    #[test]
    fn transparent_patch_is_noop() {
        let a = small();
        let p = TexturePatch::solid([1.0, 0.0, 0.0, 0.0], UvRect::FULL).unwrap();
        assert_eq!(edit_texture(&a.maps, &p).unwrap(), a.maps);
    }

    #[test]
    fn opaque_full_cover_replaces_every_texel() {
        let a = small();
        let p = TexturePatch::solid([1.0, 0.0, 0.0, 1.0], UvRect::FULL).unwrap();
        let m = edit_texture(&a.maps, &p).unwrap();
        assert!(m.color.iter().all(|c| *c == [1.0, 0.0, 0.0]));
        assert_eq!(edit_texture(&m, &p).unwrap(), m);
        assert_eq!(m.delta_mu, a.maps.delta_mu);
        assert_eq!(m.opacity, a.maps.opacity);
    }

    #[test]
    fn half_cover_touches_exact_columns() {
        let anchors_maps = crate::uvgauss::GaussianAttributeMaps {
            width: 256,
            height: 4,
            delta_mu: vec![[0.0; 3]; 1024],
            delta_s_log: vec![[0.0; 3]; 1024],
            delta_r: vec![[1.0, 0.0, 0.0, 0.0]; 1024],
            color: vec![[0.5; 3]; 1024],
            opacity: vec![1.0; 1024],
            mask: vec![1; 1024],
        };
        let p = TexturePatch::solid([0.0, 1.0, 0.0, 1.0], UvRect::new(0.0, 0.0, 0.5, 1.0).unwrap()).unwrap();
        let m = edit_texture(&anchors_maps, &p).unwrap();
        for y in 0..4 {
            for x in 0..256 {
                let changed = m.color[y * 256 + x] != anchors_maps.color[y * 256 + x];
                assert_eq!(changed, x < 128, "column {x}");
            }
        }
    }

    #[test]
    fn patch_bilinear_blend() {
        // 2x1 patch: left opaque black, right opaque white; the texel at the
        // patch center samples halfway between them.
        let mut maps = small().maps;
        maps.color.iter_mut().for_each(|c| *c = [0.0; 3]);
        let w = maps.width as f64;
        let rect = UvRect::new(10.0 / w, 0.0, 14.0 / w, 1.0).unwrap();
        let p = TexturePatch::new(2, 1, vec![[0.0, 0.0, 0.0, 1.0], [1.0, 1.0, 1.0, 1.0]], rect).unwrap();
        let m = edit_texture(&maps, &p).unwrap();
        // Texel centers 10.5..13.5 map to s = 0.125, 0.375, 0.625, 0.875 → fx clamps to [0,1].
        let row: Vec<f32> = (10..14).map(|x| m.color[x][0]).collect();
        assert_eq!(row, vec![0.0, 0.25, 0.75, 1.0]);
        assert_eq!(m.color[9], [0.0; 3]);
        assert_eq!(m.color[14], [0.0; 3]);
    }

    #[test]
    fn invalid_rects() {
        assert!(UvRect::new(0.5, 0.0, 0.5, 1.0).is_err());
        assert!(UvRect::new(0.0, 0.0, 1.5, 1.0).is_err());
        assert!(UvRect::new(f64::NAN, 0.0, 1.0, 1.0).is_err());
        assert!(TexturePatch::new(2, 2, vec![[0.0; 4]; 3], UvRect::FULL).is_err());
    }

    #[test]
    fn png_patch_decodes_linear() {
        let img = image::RgbaImage::from_raw(1, 1, vec![188, 0, 255, 128]).unwrap();
        let mut bytes = std::io::Cursor::new(Vec::new());
        img.write_to(&mut bytes, image::ImageFormat::Png).unwrap();
        let p = TexturePatch::from_png(bytes.get_ref(), UvRect::FULL).unwrap();
        assert!((p.rgba[0][0] - 0.5).abs() < 0.005);
        assert_eq!(p.rgba[0][2], 1.0);
        assert!((p.rgba[0][3] - 128.0 / 255.0).abs() < 1e-7);
    }

    #[test]
    fn shape_and_texture_commute() {
        let a = small();
        let mut beta = ShapeParams::zeros(a.template().shape_count());
        beta.beta = vec![0.7, -0.4];
        let patch = TexturePatch::new(
            2,
            2,
            vec![[1.0, 0.0, 0.0, 0.5], [0.0, 1.0, 0.0, 1.0], [0.0, 0.0, 1.0, 0.25], [1.0, 1.0, 1.0, 0.0]],
            UvRect::new(0.1, 0.2, 0.7, 0.9).unwrap(),
        )
        .unwrap();
        let mut first = edit_shape(&a, beta.clone()).unwrap();
        first.maps = edit_texture(&first.maps, &patch).unwrap();
        let mut textured = a.clone();
        textured.maps = edit_texture(&a.maps, &patch).unwrap();
        let second = edit_shape(&textured, beta).unwrap();
        assert_eq!(first.maps, second.maps);
        assert_eq!(first.anchors(), second.anchors());
        assert_eq!(first.volume(), second.volume());
    }

    #[test]
    fn zero_shape_renders_identically_and_inflate_grows_silhouette() {
        let a = small();
        let cam = front(&a, 64);
        let bg = [0.0; 3];
        let before = a.render(&a.identity_pose(), &cam, bg).unwrap();
        let same = edit_shape(&a, ShapeParams::zeros(2)).unwrap();
        assert_eq!(same.render(&a.identity_pose(), &cam, bg).unwrap(), before);
        let fat = edit_shape(&a, ShapeParams { beta: vec![1.0, 0.0] }).unwrap();
        assert_eq!(fat.anchors().len(), a.anchors().len());
        let after = fat.render(&a.identity_pose(), &cam, bg).unwrap();
        assert!(after.count_different(bg, 1e-3) > before.count_different(bg, 1e-3));
        assert!(matches!(
            edit_shape(&a, ShapeParams::zeros(3)),
            Err(crate::Error::Template(crate::template::TemplateError::LengthMismatch { .. }))
        ));
    }

    #[test]
    fn animate_constant_matches_render() {
        let a = small();
        let cam = front(&a, 32);
        let seq = PoseSequence::constant(a.template(), a.identity_pose(), 3, 30.0);
        let frames = animate(&a, &seq, &cam, [0.0; 3]).unwrap();
        let single = a.render(&a.identity_pose(), &cam, [0.0; 3]).unwrap();
        assert!(frames.iter().all(|f| *f == single));
    }

    #[test]
    fn arm_raise_moves_hand_monotonically() {
        let a = small();
        let canonical = a.canonical_gaussians().unwrap();
        let hands: Vec<usize> = a
            .anchors()
            .anchors
            .iter()
            .enumerate()
            .filter(|(_, an)| an.region == Region::Hand)
            .map(|(i, _)| i)
            .collect();
        let cam = front(&a, 128);
        let mut xs = Vec::new();
        for f in 0..10 {
            let mut pose = a.identity_pose();
            let angle = std::f64::consts::FRAC_PI_2 * f as f64 / 9.0;
            pose.joint_rotations[2] = Quat::from_axis_angle(Vec3::z(), angle);
            let (posed, _) = a.pose_gaussians(&canonical, &pose).unwrap();
            let sub = crate::uvgauss::GaussianSet { gaussians: hands.iter().map(|&i| posed.gaussians[i].clone()).collect() };
            let p = project(&cam, &sub);
            xs.push(p.splats.iter().map(|s| s.mean[0]).sum::<f64>() / p.splats.len() as f64);
        }
        assert!(xs.windows(2).all(|w| w[1] < w[0]), "{xs:?}");
    }

    #[test]
    fn pose_file_round_trip_and_remap() {
        let t = toy_humanoid();
        let mut pose = Pose::identity(t.joint_count());
        pose.root_translation = Vec3::new(0.1, 0.0, -0.2);
        pose.joint_rotations[3] = Quat::from_axis_angle(Vec3::x(), 0.4);
        let seq = PoseSequence { fps: 24.0, joint_names: t.joint_names.clone(), frames: vec![pose.clone()] };
        let back = PoseSequence::from_json(&seq.to_json(), &t).unwrap();
        assert_eq!(back, seq);
        // Reversed names with axis-angle rotations.
        let names: Vec<String> = t.joint_names.iter().rev().cloned().collect();
        let mut rot = vec![vec![0.0, 0.0, 0.0]; names.len()];
        rot[names.len() - 1 - 3] = vec![0.4, 0.0, 0.0];
        let text = serde_json::json!({"fps": 24.0, "joint_names": names, "frames": [{"root_t": [0.1, 0.0, -0.2], "rot": rot}]});
        let remapped = PoseSequence::from_json(&text.to_string(), &t).unwrap();
        assert!(remapped.frames[0].joint_rotations[3].rotation_distance(pose.joint_rotations[3]) < 1e-12);
        assert_eq!(remapped.frames[0].joint_rotations[0], Quat::IDENTITY);
        let bad = serde_json::json!({"fps": 24.0, "joint_names": ["nope"], "frames": [{"root_t": [0, 0, 0], "rot": [[1, 0, 0, 0]]}]});
        assert!(PoseSequence::from_json(&bad.to_string(), &t).is_err());
        let empty = serde_json::json!({"fps": 24.0, "joint_names": [], "frames": []});
        assert!(PoseSequence::from_json(&empty.to_string(), &t).is_err());
    }
}
