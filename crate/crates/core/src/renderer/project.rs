use super::Camera;
use crate::math::{linear_part, Mat3};
use crate::uvgauss::GaussianSet;
use nalgebra::{Matrix2x3, Vector3};
use rayon::prelude::*;

/// Isotropic screen-space low-pass added to every projected covariance (pixels²).
pub const COV_DILATION: f64 = 0.3;
/// Smallest alpha that can ever be composited.
pub const ALPHA_SKIP: f64 = 1.0 / 255.0;

/// Screen-space Gaussian.
#[derive(Clone, Debug, PartialEq)]
pub struct Splat2D {
    /// Pixel coordinates; pixel centers sit on integers.
    pub mean: [f64; 2],
    /// Symmetric covariance `[a, b, c]` for `[[a, b], [b, c]]`, pixels².
    pub cov: [f64; 3],
    /// Inverse of `cov` in the same packing.
    pub conic: [f64; 3],
    /// Camera-space z.
    pub depth: f64,
    pub color: [f64; 3],
    pub alpha: f64,
    /// Index of the Gaussian this splat came from.
    pub source: usize,
}

impl Splat2D {
    /// Build from mean and covariance, filling the conic. `None` if the
    /// covariance is not positive definite.
    pub fn new(
        mean: [f64; 2],
        cov: [f64; 3],
        depth: f64,
        color: [f64; 3],
        alpha: f64,
        source: usize,
    ) -> Option<Self> {
        let [a, b, c] = cov;
        let det = a * c - b * b;
        if !(det > 0.0 && a > 0.0 && det.is_finite()) || !mean.iter().all(|m| m.is_finite()) {
            return None;
        }
        Some(Splat2D {
            mean,
            cov,
            conic: [c / det, -b / det, a / det],
            depth,
            color,
            alpha,
            source,
        })
    }

    pub fn max_eigenvalue(&self) -> f64 {
        let [a, b, c] = self.cov;
        let mid = 0.5 * (a + c);
        mid + (0.25 * (a - c) * (a - c) + b * b).sqrt()
    }

    pub fn min_eigenvalue(&self) -> f64 {
        let [a, b, c] = self.cov;
        let det = a * c - b * b;
        det / self.max_eigenvalue()
    }

    /// Radius (pixels) outside which the splat is always below the skip
    /// threshold: at least 3σ along the major axis, wider for alphas high
    /// enough to clear 1/255 beyond 3σ.
    pub fn screen_radius(&self) -> f64 {
        if !(self.alpha >= ALPHA_SKIP) {
            return 0.0;
        }
        let q = (2.0 * (self.alpha / ALPHA_SKIP).ln()).max(9.0);
        (q * self.max_eigenvalue()).sqrt() * (1.0 + 1e-6) + 1e-6
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Projection {
    pub splats: Vec<Splat2D>,
    /// Gaussians at or behind the near plane.
    pub culled_near: usize,
    /// Gaussians whose projected covariance was not finite or not positive definite.
    pub culled_degenerate: usize,
}

/// EWA projection: `Σ = R diag(s²) Rᵀ`, `cov2d = J W Σ Wᵀ Jᵀ + 0.3 I`.
pub fn project(camera: &Camera, set: &GaussianSet) -> Projection {
    let w: Mat3 = linear_part(&camera.world_to_cam);
    let results: Vec<Result<Splat2D, bool>> = set
        .gaussians
        .par_iter()
        .enumerate()
        .map(|(source, g)| {
            let p = camera.to_camera(&g.mu);
            if !(p.z > camera.near) {
                return Err(true);
            }
            let r = g.rot.to_matrix();
            let s2 = g.scale.component_mul(&g.scale);
            let sigma = r * Mat3::from_diagonal(&s2) * r.transpose();
            let sigma_cam = w * sigma * w.transpose();
            let (x, y, z) = (p.x, p.y, p.z);
            let j = Matrix2x3::from_rows(&[
                Vector3::new(camera.fx / z, 0.0, -camera.fx * x / (z * z)).transpose(),
                Vector3::new(0.0, camera.fy / z, -camera.fy * y / (z * z)).transpose(),
            ]);
            let cov = j * sigma_cam * j.transpose();
            let mean = [camera.fx * x / z + camera.cx, camera.fy * y / z + camera.cy];
            Splat2D::new(
                mean,
                [
                    cov[(0, 0)] + COV_DILATION,
                    0.5 * (cov[(0, 1)] + cov[(1, 0)]),
                    cov[(1, 1)] + COV_DILATION,
                ],
                z,
                g.color,
                g.alpha,
                source,
            )
            .ok_or(false)
        })
        .collect();
    let mut out = Projection::default();
    for r in results {
        match r {
            Ok(s) => out.splats.push(s),
            Err(true) => out.culled_near += 1,
            Err(false) => out.culled_degenerate += 1,
        }
    }
    out
}
