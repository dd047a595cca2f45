//! UV anchors, Gaussian attribute maps and decoding into Gaussian primitives.
//!
//! Each valid texel of the attribute maps owns exactly one Gaussian. Decoding
//! applies the per-texel offsets to the texel's surface anchor:
//!
//! ```text
//! μₖ = μ̂ₖ + δμₖ        sₖ = ŝₖ ⊙ exp(δs_logₖ)        rₖ = r̂ₖ ⊗ δrₖ
//! ```
//!
//! δμ is expressed in world axes; δr is a delta in the anchor's local frame.

mod anchors;
mod maps;

pub use anchors::{build_anchor_table, Anchor, AnchorTable, NORMAL_SCALE_FRACTION};
pub use maps::{default_maps, load_maps, save_maps, GaussianAttributeMaps, LoadReport, MAGIC, PLANES};

use crate::math::{Quat, Vec3};
use crate::weights::JointWeights;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MapsError {
    #[error("bad magic: not a GAM01 attribute-map file")]
    BadMagic,
    #[error("plane {plane:?} size mismatch: expected {expected}, got {got}")]
    PlaneSizeMismatch {
        plane: String,
        expected: usize,
        got: usize,
    },
    #[error("map resolution {maps:?} does not match anchor resolution {anchors:?}")]
    ResolutionMismatch { maps: (u32, u32), anchors: (u32, u32) },
    #[error("malformed header: {0}")]
    Header(String),
    #[error("invariant violation: {0}")]
    Invariant(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Log-scale offsets saturate here so `exp` never underflows to zero.
const LOG_SCALE_LIMIT: f64 = 60.0;

/// One 3D Gaussian primitive with its skinning influences.
#[derive(Clone, Debug, PartialEq)]
pub struct Gaussian {
    pub mu: Vec3,
    pub scale: Vec3,
    pub rot: Quat,
    pub color: [f64; 3],
    pub alpha: f64,
    pub weights: JointWeights,
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct GaussianSet {
    pub gaussians: Vec<Gaussian>,
}

impl GaussianSet {
    pub fn len(&self) -> usize {
        self.gaussians.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gaussians.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Gaussian> {
        self.gaussians.iter()
    }

    /// Check scale positivity, rotation norm, alpha range and weight partition.
    pub fn validate(&self) -> Result<(), String> {
        for (k, g) in self.gaussians.iter().enumerate() {
            if !g.scale.iter().all(|&s| s > 0.0 && s.is_finite()) {
                return Err(format!("gaussian {k}: non-positive scale {:?}", g.scale));
            }
            if (g.rot.norm() - 1.0).abs() > 1e-5 {
                return Err(format!("gaussian {k}: rotation norm {}", g.rot.norm()));
            }
            if !(0.0..=1.0).contains(&g.alpha) {
                return Err(format!("gaussian {k}: alpha {} outside [0,1]", g.alpha));
            }
            if (g.weights.sum() - 1.0).abs() > 1e-5 {
                return Err(format!("gaussian {k}: weights sum to {}", g.weights.sum()));
            }
            if !g.mu.iter().all(|v| v.is_finite()) {
                return Err(format!("gaussian {k}: non-finite position"));
            }
        }
        Ok(())
    }
}

/// Apply every valid texel's offsets to its anchor.
///
/// Joint weights are copied from the anchors; body-region weights are
/// replaced later by the skinning volume query.
pub fn decode_gaussians(
    anchors: &AnchorTable,
    maps: &GaussianAttributeMaps,
) -> Result<GaussianSet, MapsError> {
    if (maps.width, maps.height) != (anchors.width, anchors.height) {
        return Err(MapsError::ResolutionMismatch {
            maps: (maps.width, maps.height),
            anchors: (anchors.width, anchors.height),
        });
    }
    maps.check_plane_sizes()?;
    let gaussians = anchors
        .anchors
        .iter()
        .map(|a| decode_one(a, maps))
        .collect();
    Ok(GaussianSet { gaussians })
}

fn decode_one(a: &Anchor, maps: &GaussianAttributeMaps) -> Gaussian {
    let t = a.texel as usize;
    let dmu = maps.delta_mu[t];
    let ds = maps.delta_s_log[t];
    let dr = Quat::from_f32(maps.delta_r[t]);
    let mu = a.position + Vec3::new(dmu[0] as f64, dmu[1] as f64, dmu[2] as f64);
    let scale = if ds == [0.0; 3] {
        a.scale
    } else {
        let f = |v: f32| (v as f64).clamp(-LOG_SCALE_LIMIT, LOG_SCALE_LIMIT).exp();
        a.scale.component_mul(&Vec3::new(f(ds[0]), f(ds[1]), f(ds[2])))
    };
    let rot = if dr == Quat::IDENTITY {
        a.rotation
    } else {
        a.rotation.mul(dr).normalized()
    };
    let c = maps.color[t];
    Gaussian {
        mu,
        scale,
        rot,
        color: [c[0] as f64, c[1] as f64, c[2] as f64],
        alpha: maps.opacity[t] as f64,
        weights: a.weights,
    }
}
