//! Skinning-weight field and linear blend skinning of Gaussians.
//!
//! Body-region Gaussians take their weights from a low-resolution voxel field
//! sampled at the decoded position, so offsets that leave the body surface
//! (loose clothing, hair) still find sensible influences. Hand and face
//! Gaussians keep the barycentric template weights of their anchors.
//!
//! Posing follows `μ' = Σᵢ wᵢ Bᵢ μ` and `R' = T[0..3,0..3] · R` with
//! `T = Σᵢ wᵢ Bᵢ`. The blended linear part is generally not orthonormal, so the
//! product is projected to the nearest rotation and the residual is reported.

use crate::container::{self, ContainerError};
use crate::math::{
    linear_part, nearest_rotation, orthonormality_residual, transform_point, Mat4, Quat, Vec3,
};
use crate::template::{BodyTemplate, JointTransforms, Region};
use crate::uvgauss::{AnchorTable, Gaussian, GaussianSet};
use crate::weights::{JointWeights, WeightAccumulator, MAX_INFLUENCES};
use kiddo::{ImmutableKdTree, SquaredEuclidean};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::num::NonZero;
use std::path::Path;
use thiserror::Error;

pub const DEFAULT_VOLUME_RES: usize = 64;
pub const KNN: usize = 8;
pub const IDW_POWER: i32 = 2;
pub const DISTANCE_FLOOR: f64 = 1e-6;
/// Bounds margin on every side, as a fraction of the largest template extent.
pub const BOUNDS_MARGIN: f64 = 0.1;
pub const WVOL_MAGIC: &[u8; 6] = b"WVOL1\n";

#[derive(Debug, Error)]
pub enum SkinningError {
    #[error("template has no vertices")]
    EmptyTemplate,
    #[error("volume resolution {0:?} must be at least 8 on every axis")]
    InvalidResolution([usize; 3]),
    #[error("no region label for gaussian {index} ({anchors} anchors for {gaussians} gaussians)")]
    RegionLabelMissing {
        index: usize,
        anchors: usize,
        gaussians: usize,
    },
    #[error("gaussian {index} has no usable skinning weights")]
    WeightsMissing { index: usize },
    #[error("bad magic: not a WVOL1 volume")]
    BadMagic,
    #[error("malformed volume file: {0}")]
    Format(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Voxel grid of joint weights over an axis-aligned box in canonical space.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightVolume {
    pub resolution: [usize; 3],
    pub bounds_min: Vec3,
    pub bounds_max: Vec3,
    /// Index `(z * gy + y) * gx + x`.
    pub voxels: Vec<JointWeights>,
}

impl WeightVolume {
    pub fn cell_size(&self) -> Vec3 {
        let ext = self.bounds_max - self.bounds_min;
        Vec3::new(
            ext.x / self.resolution[0] as f64,
            ext.y / self.resolution[1] as f64,
            ext.z / self.resolution[2] as f64,
        )
    }

    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        (z * self.resolution[1] + y) * self.resolution[0] + x
    }

    pub fn voxel_center(&self, x: usize, y: usize, z: usize) -> Vec3 {
        let c = self.cell_size();
        self.bounds_min
            + Vec3::new(
                (x as f64 + 0.5) * c.x,
                (y as f64 + 0.5) * c.y,
                (z as f64 + 0.5) * c.z,
            )
    }

    /// Trilinear blend of the eight surrounding voxel centers, truncated to
    /// four influences. Points outside the lattice clamp to its boundary.
    pub fn sample(&self, p: &Vec3) -> JointWeights {
        let c = self.cell_size();
        let mut base = [0usize; 3];
        let mut frac = [0.0f64; 3];
        for axis in 0..3 {
            let n = self.resolution[axis];
            let g = ((p[axis] - self.bounds_min[axis]) / c[axis] - 0.5).clamp(0.0, (n - 1) as f64);
            let i0 = (g.floor() as usize).min(n - 2);
            base[axis] = i0;
            frac[axis] = g - i0 as f64;
        }
        let mut acc = WeightAccumulator::default();
        for corner in 0..8 {
            let mut w = 1.0;
            let mut idx = [0usize; 3];
            for axis in 0..3 {
                let hi = (corner >> axis) & 1 == 1;
                idx[axis] = base[axis] + hi as usize;
                w *= if hi { frac[axis] } else { 1.0 - frac[axis] };
            }
            if w == 0.0 {
                continue;
            }
            acc.add_scaled(&self.voxels[self.index(idx[0], idx[1], idx[2])], w);
        }
        acc.finish().unwrap_or_default()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = VolumeHeader {
            resolution: self.resolution,
            bounds: [
                [self.bounds_min.x, self.bounds_min.y, self.bounds_min.z],
                [self.bounds_max.x, self.bounds_max.y, self.bounds_max.z],
            ],
        };
        let mut data = Vec::with_capacity(self.voxels.len() * 24);
        for v in &self.voxels {
            let mut joints = [0u16; MAX_INFLUENCES];
            let mut weights = [0f32; MAX_INFLUENCES];
            for (i, (j, w)) in v.iter().enumerate() {
                joints[i] = j as u16;
                weights[i] = w as f32;
            }
            data.extend(container::u16_bytes(&joints));
            data.extend(container::f32_bytes(&weights));
        }
        container::encode(WVOL_MAGIC, &header, &[&data])
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, SkinningError> {
        let decoded = container::decode(WVOL_MAGIC, bytes).map_err(|e| match e {
            ContainerError::BadMagic { .. } => SkinningError::BadMagic,
            other => SkinningError::Format(other.to_string()),
        })?;
        let header: VolumeHeader = serde_json::from_slice(decoded.header)
            .map_err(|e| SkinningError::Format(e.to_string()))?;
        let n: usize = header.resolution.iter().product();
        if decoded.data.len() != n * 24 {
            return Err(SkinningError::Format(format!(
                "expected {} voxel bytes, found {}",
                n * 24,
                decoded.data.len()
            )));
        }
        let voxels = decoded
            .data
            .chunks_exact(24)
            .map(|chunk| {
                let joints = container::read_u16s(&chunk[..8]);
                let weights = container::read_f32s(&chunk[8..]);
                let pairs: Vec<(u32, f64)> = joints
                    .iter()
                    .zip(&weights)
                    .filter(|(_, &w)| w > 0.0)
                    .map(|(&j, &w)| (j as u32, w as f64))
                    .collect();
                JointWeights::from_raw(&pairs)
            })
            .collect();
        Ok(WeightVolume {
            resolution: header.resolution,
            bounds_min: Vec3::from(header.bounds[0]),
            bounds_max: Vec3::from(header.bounds[1]),
            voxels,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), SkinningError> {
        std::fs::write(path.as_ref(), self.to_bytes()).map_err(|source| SkinningError::Io {
            path: path.as_ref().display().to_string(),
            source,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, SkinningError> {
        let bytes = std::fs::read(path.as_ref()).map_err(|source| SkinningError::Io {
            path: path.as_ref().display().to_string(),
            source,
        })?;
        Self::from_bytes(&bytes)
    }
}

#[derive(Serialize, Deserialize)]
struct VolumeHeader {
    resolution: [usize; 3],
    bounds: [[f64; 3]; 2],
}

/// Inverse-distance blend (power 2) of the skin weights of the `KNN` nearest
/// template vertices at every voxel center.
pub fn build_weight_volume(
    template: &BodyTemplate,
    shaped_vertices: &[Vec3],
    resolution: [usize; 3],
) -> Result<WeightVolume, SkinningError> {
    if shaped_vertices.is_empty() {
        return Err(SkinningError::EmptyTemplate);
    }
    if resolution.iter().any(|&r| r < 8) {
        return Err(SkinningError::InvalidResolution(resolution));
    }
    let (lo, hi) = BodyTemplate::bounds(shaped_vertices).expect("nonempty");
    let extent = hi - lo;
    let margin = (BOUNDS_MARGIN * extent.max()).max(1e-3);
    let mut volume = WeightVolume {
        resolution,
        bounds_min: lo.add_scalar(-margin),
        bounds_max: hi.add_scalar(margin),
        voxels: Vec::new(),
    };

    let points: Vec<[f64; 3]> = shaped_vertices.iter().map(|v| [v.x, v.y, v.z]).collect();
    let tree: ImmutableKdTree<f64, 3> =
        ImmutableKdTree::new_from_slice(&points).expect("kd-tree over template vertices");
    let vertex_weights: Vec<JointWeights> = (0..template.vertex_count())
        .map(|v| template.vertex_weights(v))
        .collect();
    let k = KNN.min(points.len());

    let [gx, gy, gz] = resolution;
    let voxels = (0..gx * gy * gz)
        .into_par_iter()
        .map(|i| {
            let (x, y, z) = (i % gx, (i / gx) % gy, i / (gx * gy));
            let c = volume.voxel_center(x, y, z);
            let query = [c.x, c.y, c.z];
            let nearest = tree
                .query(&query)
                .nearest_n::<SquaredEuclidean<f64>>(NonZero::new(k).unwrap())
                .execute();
            let kth = nearest.iter().map(|n| n.distance).fold(0.0, f64::max);
            // Re-query everything at the k-th distance so ties resolve by
            // vertex index rather than by tree layout.
            let mut candidates: Vec<(f64, usize)> = tree
                .query(&query)
                .within::<SquaredEuclidean<f64>>(kth)
                .execute()
                .into_iter()
                .map(|n| (n.distance, n.item as usize))
                .collect();
            candidates.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            candidates.truncate(k);
            let mut acc = WeightAccumulator::default();
            for (d2, v) in candidates {
                let d = d2.sqrt().max(DISTANCE_FLOOR);
                acc.add_scaled(&vertex_weights[v], 1.0 / d.powi(IDW_POWER));
            }
            acc.finish().unwrap_or_default()
        })
        .collect();
    volume.voxels = voxels;
    Ok(volume)
}

/// Per-Gaussian weights: volume lookup at μ for body Gaussians, anchor
/// weights unchanged for hand and face Gaussians.
pub fn query_weights(
    volume: &WeightVolume,
    anchors: &AnchorTable,
    decoded: &GaussianSet,
) -> Result<Vec<JointWeights>, SkinningError> {
    if anchors.len() != decoded.len() {
        return Err(SkinningError::RegionLabelMissing {
            index: anchors.len().min(decoded.len()),
            anchors: anchors.len(),
            gaussians: decoded.len(),
        });
    }
    Ok(anchors
        .anchors
        .par_iter()
        .zip(decoded.gaussians.par_iter())
        .map(|(a, g)| match a.region {
            Region::Hand | Region::Face => a.weights,
            Region::Body => volume.sample(&g.mu),
        })
        .collect())
}

/// Replace each Gaussian's weights.
pub fn attach_weights(set: &mut GaussianSet, weights: Vec<JointWeights>) {
    assert_eq!(set.len(), weights.len());
    for (g, w) in set.gaussians.iter_mut().zip(weights) {
        g.weights = w;
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct SkinReport {
    /// Largest `‖AᵀA − I‖_F` of any blended linear part this frame.
    pub max_orthonormality_residual: f64,
}

/// Pose every Gaussian by linear blend skinning. Scale, color and alpha
/// pass through unchanged.
pub fn skin_gaussians(
    set: &GaussianSet,
    transforms: &JointTransforms,
) -> Result<(GaussianSet, SkinReport), SkinningError> {
    for (index, g) in set.gaussians.iter().enumerate() {
        let bad_joint = g
            .weights
            .max_joint()
            .is_some_and(|j| j as usize >= transforms.len());
        if g.weights.is_empty() || bad_joint {
            return Err(SkinningError::WeightsMissing { index });
        }
    }
    let posed: Vec<(Gaussian, f64)> = set
        .gaussians
        .par_iter()
        .map(|g| skin_one(g, transforms))
        .collect();
    let max_residual = posed.iter().map(|p| p.1).fold(0.0, f64::max);
    Ok((
        GaussianSet {
            gaussians: posed.into_iter().map(|p| p.0).collect(),
        },
        SkinReport {
            max_orthonormality_residual: max_residual,
        },
    ))
}

fn skin_one(g: &Gaussian, transforms: &JointTransforms) -> (Gaussian, f64) {
    let b = &transforms.transforms;
    let mut influences = g.weights.iter();
    let (j0, _) = influences.next().expect("checked nonempty");
    // A convex blend of identical matrices is that matrix; skip the
    // arithmetic so identity poses are exact fixpoints.
    let blended = if g.weights.iter().all(|(j, _)| b[j as usize] == b[j0 as usize]) {
        b[j0 as usize]
    } else {
        g.weights
            .iter()
            .fold(Mat4::zeros(), |acc, (j, w)| acc + b[j as usize] * w)
    };
    if blended == Mat4::identity() {
        return (g.clone(), 0.0);
    }
    let linear = linear_part(&blended);
    let residual = orthonormality_residual(&linear);
    let rot = Quat::from_matrix(&nearest_rotation(&(linear * g.rot.to_matrix())));
    let mut out = g.clone();
    out.mu = transform_point(&blended, &g.mu);
    out.rot = rot;
    (out, residual)
}
