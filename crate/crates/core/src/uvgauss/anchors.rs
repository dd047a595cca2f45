//! UV-space rasterization of the template into per-texel surface anchors.

use crate::math::{Mat3, Quat, Vec3};
use crate::template::{BodyTemplate, Region};
use crate::weights::{JointWeights, WeightAccumulator};

/// Texel-step multiplier for the anchor's normal-axis scale.
pub const NORMAL_SCALE_FRACTION: f64 = 0.1;
/// Slack on the barycentric inside test for texel centers on shared edges.
const INSIDE_EPS: f64 = 1e-9;
const DEGENERATE_AREA: f64 = 1e-14;

/// One valid texel's surface anchor.
#[derive(Clone, Debug, PartialEq)]
pub struct Anchor {
    /// Row-major texel index `y * width + x`.
    pub texel: u32,
    pub triangle: u32,
    pub barycentric: [f64; 3],
    /// Anchor position μ̂ (meters).
    pub position: Vec3,
    /// Anchor scale ŝ: texel footprint along u, v and a thin normal axis (meters).
    pub scale: Vec3,
    /// Anchor rotation r̂: tangent frame (u-tangent, bitangent, normal).
    pub rotation: Quat,
    pub region: Region,
    /// Template weights blended barycentrically.
    pub weights: JointWeights,
}

/// Anchors for every covered texel, in row-major texel order.
#[derive(Clone, Debug, PartialEq)]
pub struct AnchorTable {
    pub width: u32,
    pub height: u32,
    pub anchors: Vec<Anchor>,
    /// Triangles skipped for zero UV or world area.
    pub degenerate_triangles: usize,
}

impl AnchorTable {
    pub fn len(&self) -> usize {
        self.anchors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.anchors.is_empty()
    }

    pub fn texel_count(&self) -> usize {
        self.width as usize * self.height as usize
    }

    /// Validity mask, one byte per texel.
    pub fn mask(&self) -> Vec<u8> {
        let mut mask = vec![0u8; self.texel_count()];
        for a in &self.anchors {
            mask[a.texel as usize] = 1;
        }
        mask
    }

    /// Anchor index of a texel, if valid.
    pub fn anchor_at(&self, x: u32, y: u32) -> Option<usize> {
        let texel = y * self.width + x;
        self.anchors.binary_search_by_key(&texel, |a| a.texel).ok()
    }
}

/// Rasterize every template triangle in UV space at `width × height` texels.
///
/// A texel is covered when its center `((x+0.5)/W, (y+0.5)/H)` lies inside
/// the triangle's UV footprint; shared texels go to the lowest triangle index.
pub fn build_anchor_table(
    template: &BodyTemplate,
    shaped_vertices: &[Vec3],
    width: u32,
    height: u32,
) -> AnchorTable {
    assert_eq!(
        shaped_vertices.len(),
        template.vertex_count(),
        "shaped vertex count must match the template"
    );
    let (w, h) = (width as usize, height as usize);
    // (triangle, barycentrics) per claimed texel.
    let mut owner: Vec<Option<(u32, [f64; 3])>> = vec![None; w * h];
    let mut frames: Vec<Option<TriangleFrame>> = Vec::with_capacity(template.triangle_count());
    let mut degenerate = 0usize;

    for (t, (tri, uvs)) in template
        .triangles
        .iter()
        .zip(&template.uv_corners)
        .enumerate()
    {
        let p = tri.map(|i| shaped_vertices[i as usize]);
        let uv = uvs.map(|c| [c[0] as f64, c[1] as f64]);
        let Some(frame) = TriangleFrame::new(p, uv, width, height) else {
            degenerate += 1;
            frames.push(None);
            continue;
        };
        frames.push(Some(frame));

        let umin = uv.iter().map(|c| c[0]).fold(f64::INFINITY, f64::min);
        let umax = uv.iter().map(|c| c[0]).fold(f64::NEG_INFINITY, f64::max);
        let vmin = uv.iter().map(|c| c[1]).fold(f64::INFINITY, f64::min);
        let vmax = uv.iter().map(|c| c[1]).fold(f64::NEG_INFINITY, f64::max);
        let x0 = ((umin * w as f64 - 0.5).floor().max(0.0)) as usize;
        let x1 = ((umax * w as f64 - 0.5).ceil().max(0.0) as usize).min(w.saturating_sub(1));
        let y0 = ((vmin * h as f64 - 0.5).floor().max(0.0)) as usize;
        let y1 = ((vmax * h as f64 - 0.5).ceil().max(0.0) as usize).min(h.saturating_sub(1));

        let det = (uv[1][0] - uv[0][0]) * (uv[2][1] - uv[0][1])
            - (uv[2][0] - uv[0][0]) * (uv[1][1] - uv[0][1]);
        for y in y0..=y1 {
            let cv = (y as f64 + 0.5) / h as f64;
            for x in x0..=x1 {
                let slot = &mut owner[y * w + x];
                if slot.is_some() {
                    continue;
                }
                let cu = (x as f64 + 0.5) / w as f64;
                let l1 = ((cu - uv[0][0]) * (uv[2][1] - uv[0][1])
                    - (uv[2][0] - uv[0][0]) * (cv - uv[0][1]))
                    / det;
                let l2 = ((uv[1][0] - uv[0][0]) * (cv - uv[0][1])
                    - (cu - uv[0][0]) * (uv[1][1] - uv[0][1]))
                    / det;
                let l0 = 1.0 - l1 - l2;
                if l0 >= -INSIDE_EPS && l1 >= -INSIDE_EPS && l2 >= -INSIDE_EPS {
                    let b = [l0.max(0.0), l1.max(0.0), l2.max(0.0)];
                    let s = b[0] + b[1] + b[2];
                    *slot = Some((t as u32, [b[0] / s, b[1] / s, b[2] / s]));
                }
            }
        }
    }
    if degenerate > 0 {
        log::warn!("skipped {degenerate} degenerate triangles while building anchors");
    }

    let anchors = owner
        .iter()
        .enumerate()
        .filter_map(|(texel, slot)| {
            let (t, bary) = (*slot)?;
            let tri = template.triangles[t as usize];
            let frame = frames[t as usize].as_ref().expect("claimed by a valid triangle");
            let position = (0..3)
                .map(|k| shaped_vertices[tri[k] as usize] * bary[k])
                .fold(Vec3::zeros(), |a, b| a + b);
            let mut acc = WeightAccumulator::default();
            for k in 0..3 {
                acc.add_scaled(&template.vertex_weights(tri[k] as usize), bary[k]);
            }
            let weights = acc
                .finish()
                .unwrap_or_else(|| template.vertex_weights(tri[0] as usize));
            Some(Anchor {
                texel: texel as u32,
                triangle: t,
                barycentric: bary,
                position,
                scale: frame.scale,
                rotation: frame.rotation,
                region: template.region_labels[t as usize],
                weights,
            })
        })
        .collect();

    AnchorTable {
        width,
        height,
        anchors,
        degenerate_triangles: degenerate,
    }
}

/// Per-triangle tangent frame and texel footprint.
#[derive(Clone, Debug)]
struct TriangleFrame {
    rotation: Quat,
    scale: Vec3,
}

impl TriangleFrame {
    fn new(p: [Vec3; 3], uv: [[f64; 2]; 3], width: u32, height: u32) -> Option<Self> {
        let e1 = p[1] - p[0];
        let e2 = p[2] - p[0];
        let (du1, dv1) = (uv[1][0] - uv[0][0], uv[1][1] - uv[0][1]);
        let (du2, dv2) = (uv[2][0] - uv[0][0], uv[2][1] - uv[0][1]);
        let det = du1 * dv2 - du2 * dv1;
        if det.abs() < DEGENERATE_AREA || e1.cross(&e2).norm() < DEGENERATE_AREA {
            return None;
        }
        let dp_du = (e1 * dv2 - e2 * dv1) / det;
        let dp_dv = (e2 * du1 - e1 * du2) / det;
        let tangent = dp_du.try_normalize(1e-12)?;
        let bitangent = (dp_dv - tangent * dp_dv.dot(&tangent)).try_normalize(1e-12)?;
        let normal = tangent.cross(&bitangent);
        let frame = Mat3::from_columns(&[tangent, bitangent, normal]);
        let e_u = dp_du.norm() / width as f64;
        let e_v = dp_dv.norm() / height as f64;
        Some(TriangleFrame {
            rotation: Quat::from_matrix(&frame),
            scale: Vec3::new(e_u, e_v, NORMAL_SCALE_FRACTION * e_u.min(e_v)),
        })
    }
}
