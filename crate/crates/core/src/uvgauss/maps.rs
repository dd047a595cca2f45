//! Gaussian attribute maps and the `.gam` container.

use super::{AnchorTable, MapsError};
use crate::container::{self, ContainerError};
use serde::{Deserialize, Serialize};
use std::path::Path;

pub const MAGIC: &[u8; 6] = b"GAM01\n";
pub const PLANES: [&str; 6] = ["delta_mu", "delta_s_log", "delta_r", "color", "opacity", "mask"];
/// Load-time rotation renormalization only kicks in beyond this deviation,
/// so already-normalized maps round-trip bit for bit.
const RENORMALIZE_TOL: f64 = 1e-6;

/// UV rasters of per-texel Gaussian attributes, row-major, `width × height`.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianAttributeMaps {
    pub width: u32,
    pub height: u32,
    /// Position offset δμ in world axes, meters.
    pub delta_mu: Vec<[f32; 3]>,
    /// Log of the multiplicative scale factor δs.
    pub delta_s_log: Vec<[f32; 3]>,
    /// Local rotation delta δr, unit quaternion `(w,x,y,z)`.
    pub delta_r: Vec<[f32; 4]>,
    /// Linear RGB in `[0,1]`.
    pub color: Vec<[f32; 3]>,
    pub opacity: Vec<f32>,
    pub mask: Vec<u8>,
}

/// What [`load_maps`] had to fix up.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct LoadReport {
    pub color_clamped: usize,
    pub opacity_clamped: usize,
    pub rotations_renormalized: usize,
}

#[derive(Serialize, Deserialize)]
struct Header {
    width: u32,
    height: u32,
    planes: Vec<String>,
}

impl GaussianAttributeMaps {
    /// Identity offsets everywhere, uniform color, full opacity, mask from `anchors`.
    pub fn neutral(anchors: &AnchorTable, base_color: [f32; 3]) -> Self {
        let n = anchors.texel_count();
        GaussianAttributeMaps {
            width: anchors.width,
            height: anchors.height,
            delta_mu: vec![[0.0; 3]; n],
            delta_s_log: vec![[0.0; 3]; n],
            delta_r: vec![[1.0, 0.0, 0.0, 0.0]; n],
            color: vec![base_color; n],
            opacity: vec![1.0; n],
            mask: anchors.mask(),
        }
    }

    pub fn texel_count(&self) -> usize {
        self.width as usize * self.height as usize
    }

    pub fn valid_count(&self) -> usize {
        self.mask.iter().filter(|&&m| m != 0).count()
    }

    /// Every plane must hold exactly `width × height` entries.
    pub fn check_plane_sizes(&self) -> Result<(), MapsError> {
        let n = self.texel_count();
        let sizes = [
            ("delta_mu", self.delta_mu.len()),
            ("delta_s_log", self.delta_s_log.len()),
            ("delta_r", self.delta_r.len()),
            ("color", self.color.len()),
            ("opacity", self.opacity.len()),
            ("mask", self.mask.len()),
        ];
        for (plane, len) in sizes {
            if len != n {
                return Err(MapsError::PlaneSizeMismatch {
                    plane: plane.to_string(),
                    expected: n,
                    got: len,
                });
            }
        }
        Ok(())
    }

    /// Normalize valid-texel rotations and clamp color/opacity into `[0,1]`.
    pub fn sanitize(&mut self) -> LoadReport {
        let mut report = LoadReport::default();
        for (i, q) in self.delta_r.iter_mut().enumerate() {
            if self.mask[i] == 0 {
                continue;
            }
            let n = q.iter().map(|&c| c as f64 * c as f64).sum::<f64>().sqrt();
            if (n - 1.0).abs() > RENORMALIZE_TOL {
                report.rotations_renormalized += 1;
                *q = if n > 0.0 && n.is_finite() {
                    q.map(|c| (c as f64 / n) as f32)
                } else {
                    [1.0, 0.0, 0.0, 0.0]
                };
            }
        }
        for c in self.color.iter_mut().flatten() {
            let clamped = clamp01(*c);
            if clamped.to_bits() != c.to_bits() {
                report.color_clamped += 1;
                *c = clamped;
            }
        }
        for a in &mut self.opacity {
            let clamped = clamp01(*a);
            if clamped.to_bits() != a.to_bits() {
                report.opacity_clamped += 1;
                *a = clamped;
            }
        }
        report
    }

    /// Check the load-time invariants without modifying anything.
    pub fn check_invariants(&self) -> Result<(), MapsError> {
        self.check_plane_sizes()?;
        for (i, q) in self.delta_r.iter().enumerate() {
            if self.mask[i] == 0 {
                continue;
            }
            let n = q.iter().map(|&c| c as f64 * c as f64).sum::<f64>().sqrt();
            if (n - 1.0).abs() > 1e-4 {
                return Err(MapsError::Invariant(format!("delta_r at texel {i} has norm {n}")));
            }
        }
        if let Some(i) = self.color.iter().position(|c| c.iter().any(|v| !(0.0..=1.0).contains(v))) {
            return Err(MapsError::Invariant(format!("color at texel {i} outside [0,1]")));
        }
        if let Some(i) = self.opacity.iter().position(|v| !(0.0..=1.0).contains(v)) {
            return Err(MapsError::Invariant(format!("opacity at texel {i} outside [0,1]")));
        }
        let finite = self.delta_mu.iter().flatten().chain(self.delta_s_log.iter().flatten()).all(|v| v.is_finite());
        if !finite {
            return Err(MapsError::Invariant("non-finite position or scale offset".into()));
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = Header {
            width: self.width,
            height: self.height,
            planes: PLANES.iter().map(|s| s.to_string()).collect(),
        };
        let f = |v: Vec<f32>| container::f32_bytes(&v);
        let buffers = [
            f(self.delta_mu.iter().flatten().copied().collect()),
            f(self.delta_s_log.iter().flatten().copied().collect()),
            f(self.delta_r.iter().flatten().copied().collect()),
            f(self.color.iter().flatten().copied().collect()),
            f(self.opacity.clone()),
            self.mask.clone(),
        ];
        let refs: Vec<&[u8]> = buffers.iter().map(|b| b.as_slice()).collect();
        container::encode(MAGIC, &header, &refs)
    }

    /// Parse a `.gam` container and sanitize it (see [`Self::sanitize`]).
    pub fn from_bytes(bytes: &[u8]) -> Result<(Self, LoadReport), MapsError> {
        let decoded = container::decode(MAGIC, bytes).map_err(|e| match e {
            ContainerError::BadMagic { .. } => MapsError::BadMagic,
            other => MapsError::Header(other.to_string()),
        })?;
        let header: Header = serde_json::from_slice(decoded.header)
            .map_err(|e| MapsError::Header(e.to_string()))?;
        if header.planes != PLANES {
            return Err(MapsError::Header(format!(
                "unexpected plane list {:?}",
                header.planes
            )));
        }
        let n = header.width as usize * header.height as usize;
        let channels = [3usize, 3, 4, 3, 1];
        let mut lens: Vec<usize> = channels.iter().map(|c| c * n * 4).collect();
        lens.push(n);
        let offsets = container::buffer_offsets(&lens);
        let expected_total = offsets[5] + lens[5];
        if decoded.data.len() != expected_total {
            // Find the first plane that doesn't fit for a useful message.
            let plane = PLANES
                .iter()
                .zip(offsets.iter().zip(&lens))
                .find(|(_, (&o, &l))| o + l > decoded.data.len())
                .map_or("mask", |(p, _)| *p);
            return Err(MapsError::PlaneSizeMismatch {
                plane: plane.to_string(),
                expected: expected_total,
                got: decoded.data.len(),
            });
        }
        let slice = |i: usize| &decoded.data[offsets[i]..offsets[i] + lens[i]];
        let vec3 = |b: &[u8]| -> Vec<[f32; 3]> {
            container::read_f32s(b).chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect()
        };
        let mut maps = GaussianAttributeMaps {
            width: header.width,
            height: header.height,
            delta_mu: vec3(slice(0)),
            delta_s_log: vec3(slice(1)),
            delta_r: container::read_f32s(slice(2))
                .chunks_exact(4)
                .map(|c| [c[0], c[1], c[2], c[3]])
                .collect(),
            color: vec3(slice(3)),
            opacity: container::read_f32s(slice(4)),
            mask: slice(5).to_vec(),
        };
        maps.check_plane_sizes()?;
        let report = maps.sanitize();
        Ok((maps, report))
    }
}

fn clamp01(v: f32) -> f32 {
    if v.is_nan() {
        0.0
    } else {
        v.clamp(0.0, 1.0)
    }
}

/// Neutral avatar maps: zero offsets, uniform color, opacity 1.
pub fn default_maps(anchors: &AnchorTable, base_color: [f32; 3]) -> GaussianAttributeMaps {
    GaussianAttributeMaps::neutral(anchors, base_color)
}

pub fn save_maps(maps: &GaussianAttributeMaps, path: impl AsRef<Path>) -> Result<(), MapsError> {
    maps.check_plane_sizes()?;
    std::fs::write(path.as_ref(), maps.to_bytes()).map_err(|source| MapsError::Io {
        path: path.as_ref().display().to_string(),
        source,
    })
}

pub fn load_maps(path: impl AsRef<Path>) -> Result<(GaussianAttributeMaps, LoadReport), MapsError> {
    let bytes = std::fs::read(path.as_ref()).map_err(|source| MapsError::Io {
        path: path.as_ref().display().to_string(),
        source,
    })?;
    GaussianAttributeMaps::from_bytes(&bytes)
}
