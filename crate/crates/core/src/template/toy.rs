//! Procedural capsule-chain humanoid used by tests, demos and the CLI.
//!
//! Layout (y up, meters): a vertical torso from the pelvis (joint 0) to the
//! chest (joint 1), a horizontal arm chain along +x whose last bone is the
//! hand, and a head capsule rigidly attached to the chest. Each capsule gets
//! its own rectangular UV island; islands are packed on a grid.

use super::{BodyTemplate, Region, SkinRow};
use crate::math::Vec3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::f64::consts::{FRAC_PI_2, TAU};

const RADIAL: usize = 16;
const CAP_RINGS: usize = 3;
/// Island side as a fraction of its grid cell.
const ISLAND_FILL: f64 = 0.9;
const INFLATE_M: f64 = 0.02;

const PELVIS: [f64; 3] = [0.0, 0.9, 0.0];
const SHOULDER_HEIGHT: f64 = 1.35;
const ARM_REACH: f64 = 0.75;

struct Capsule {
    a: Vec3,
    b: Vec3,
    radius: f64,
    region: Region,
    start_joint: u32,
    /// Joint the far end blends into; `None` keeps the whole capsule on `start_joint`.
    end_joint: Option<u32>,
    shape_amplitude: f64,
}

/// The default toy humanoid: five joints, eight segments per bone, seed 0.
pub fn toy_humanoid() -> BodyTemplate {
    make_toy_template(5, 8, 0)
}

/// Deterministic capsule-chain humanoid with `joints` joints (≥ 2).
///
/// Two blendshapes: 0 inflates every capsule uniformly by 2 cm per unit,
/// 1 inflates/deflates each capsule by a seed-dependent amount.
pub fn make_toy_template(joints: usize, segments_per_bone: usize, seed: u64) -> BodyTemplate {
    assert!(joints >= 2, "toy template needs at least two joints");
    let segments = segments_per_bone.max(1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut jitter = |r: f64| r * (1.0 + 0.1 * rng.random_range(-1.0..1.0));

    let mut rest = vec![Vec3::from(PELVIS), Vec3::new(0.0, SHOULDER_HEIGHT, 0.0)];
    let spacing = ARM_REACH / (joints - 1) as f64;
    for k in 2..joints {
        rest.push(Vec3::new((k - 1) as f64 * spacing, SHOULDER_HEIGHT, 0.0));
    }
    let tip = Vec3::new(ARM_REACH, SHOULDER_HEIGHT, 0.0);

    let mut capsules = vec![Capsule {
        a: rest[0],
        b: rest[1],
        radius: jitter(0.13),
        region: Region::Body,
        start_joint: 0,
        end_joint: Some(1),
        shape_amplitude: 0.0,
    }];
    for k in 1..joints - 1 {
        capsules.push(Capsule {
            a: rest[k],
            b: rest[k + 1],
            radius: jitter(0.05),
            region: Region::Body,
            start_joint: k as u32,
            end_joint: Some(k as u32 + 1),
            shape_amplitude: 0.0,
        });
    }
    capsules.push(Capsule {
        a: rest[joints - 1],
        b: tip,
        radius: jitter(0.04),
        region: Region::Hand,
        start_joint: joints as u32 - 1,
        end_joint: None,
        shape_amplitude: 0.0,
    });
    capsules.push(Capsule {
        a: Vec3::new(0.0, 1.47, 0.0),
        b: Vec3::new(0.0, 1.62, 0.0),
        radius: jitter(0.1),
        region: Region::Face,
        start_joint: 1,
        end_joint: None,
        shape_amplitude: 0.0,
    });
    for c in &mut capsules {
        c.shape_amplitude = rng.random_range(-1.0..1.0);
    }

    let n = capsules.len();
    let cols = (n as f64).sqrt().ceil() as usize;
    let rows = n.div_ceil(cols);

    let mut builder = MeshBuilder::default();
    for (i, cap) in capsules.iter().enumerate() {
        let (col, row) = (i % cols, i / cols);
        let margin = 0.5 * (1.0 - ISLAND_FILL);
        let island = [
            (col as f64 + margin) / cols as f64,
            (col as f64 + 1.0 - margin) / cols as f64,
            (row as f64 + margin) / rows as f64,
            (row as f64 + 1.0 - margin) / rows as f64,
        ];
        builder.add_capsule(cap, segments, island);
    }

    let mut names = vec!["pelvis".to_string(), "chest".to_string()];
    names.extend((2..joints).map(|k| format!("arm_{}", k - 1)));

    let q3 = |v: Vec3| [v.x as f32, v.y as f32, v.z as f32];
    BodyTemplate {
        vertices: builder.positions.iter().map(|&p| q3(p)).collect(),
        triangles: builder.triangles,
        uv_corners: builder.uvs,
        parents: (0..joints).map(|j| j.checked_sub(1)).collect(),
        rest_joints: rest.iter().map(|&p| q3(p)).collect(),
        skin: builder.skin,
        shape_blendshapes: vec![
            builder.normals.iter().map(|&nrm| q3(nrm * INFLATE_M)).collect(),
            builder
                .normals
                .iter()
                .zip(&builder.amplitudes)
                .map(|(&nrm, &amp)| q3(nrm * INFLATE_M * amp))
                .collect(),
        ],
        region_labels: builder.regions,
        joint_names: names,
    }
}

#[derive(Default)]
struct MeshBuilder {
    positions: Vec<Vec3>,
    normals: Vec<Vec3>,
    amplitudes: Vec<f64>,
    skin: Vec<SkinRow>,
    triangles: Vec<[u32; 3]>,
    uvs: Vec<[[f32; 2]; 3]>,
    regions: Vec<Region>,
}

impl MeshBuilder {
    fn add_capsule(&mut self, cap: &Capsule, segments: usize, island: [f64; 4]) {
        let axis = cap.b - cap.a;
        let length = axis.norm();
        let d = axis / length;
        let helper = if d.z.abs() < 0.9 { Vec3::z() } else { Vec3::x() };
        let e1 = helper.cross(&d).normalize();
        let e2 = d.cross(&e1);
        let r = cap.radius;

        // Profile of the surface of revolution: (axial offset from a, ring radius).
        let mut profile = vec![(-r, 0.0)];
        for i in 1..CAP_RINGS {
            let phi = FRAC_PI_2 * i as f64 / CAP_RINGS as f64;
            profile.push((-r * phi.cos(), r * phi.sin()));
        }
        for s in 0..=segments {
            profile.push((length * s as f64 / segments as f64, r));
        }
        for i in (1..CAP_RINGS).rev() {
            let phi = FRAC_PI_2 * i as f64 / CAP_RINGS as f64;
            profile.push((length + r * phi.cos(), r * phi.sin()));
        }
        profile.push((length + r, 0.0));

        let mut arc = vec![0.0];
        for w in profile.windows(2) {
            let step = ((w[1].0 - w[0].0).powi(2) + (w[1].1 - w[0].1).powi(2)).sqrt();
            arc.push(arc.last().unwrap() + step);
        }
        let total = *arc.last().unwrap();
        let [u0, u1, v0, v1] = island;
        let uv = |u: f64, v: f64| -> [f32; 2] {
            [(u0 + (u1 - u0) * u) as f32, (v0 + (v1 - v0) * v / total) as f32]
        };

        let push_vertex = |mb: &mut MeshBuilder, h: f64, p: Vec3| -> u32 {
            let t = (h / length).clamp(0.0, 1.0);
            let on_axis = cap.a + d * (h.clamp(0.0, length));
            let normal = (p - on_axis).try_normalize(1e-12).unwrap_or(if h < 0.0 { -d } else { d });
            let row = match cap.end_joint {
                Some(end) if t > 0.0 && t < 1.0 => SkinRow {
                    joints: [cap.start_joint, end, 0, 0],
                    weights: [(1.0 - t) as f32, t as f32, 0.0, 0.0],
                },
                Some(end) if t >= 1.0 => SkinRow {
                    joints: [end, 0, 0, 0],
                    weights: [1.0, 0.0, 0.0, 0.0],
                },
                _ => SkinRow {
                    joints: [cap.start_joint, 0, 0, 0],
                    weights: [1.0, 0.0, 0.0, 0.0],
                },
            };
            mb.positions.push(p);
            mb.normals.push(normal);
            mb.amplitudes.push(cap.shape_amplitude);
            mb.skin.push(fix_weight_sum(row));
            (mb.positions.len() - 1) as u32
        };

        let bottom_pole = push_vertex(self, profile[0].0, cap.a + d * profile[0].0);
        let mut rings: Vec<Vec<u32>> = Vec::new();
        for &(h, rho) in &profile[1..profile.len() - 1] {
            let ring = (0..RADIAL)
                .map(|j| {
                    let theta = TAU * j as f64 / RADIAL as f64;
                    let p = cap.a + d * h + (e1 * theta.cos() + e2 * theta.sin()) * rho;
                    push_vertex(self, h, p)
                })
                .collect();
            rings.push(ring);
        }
        let last = profile.len() - 1;
        let top_pole = push_vertex(self, profile[last].0, cap.a + d * profile[last].0);

        let ru = |j: usize| j as f64 / RADIAL as f64;
        for j in 0..RADIAL {
            let jn = (j + 1) % RADIAL;
            let mid = (j as f64 + 0.5) / RADIAL as f64;
            self.push_tri(
                [bottom_pole, rings[0][jn], rings[0][j]],
                [uv(mid, arc[0]), uv(ru(j + 1), arc[1]), uv(ru(j), arc[1])],
                cap.region,
            );
            let k = rings.len() - 1;
            self.push_tri(
                [top_pole, rings[k][j], rings[k][jn]],
                [uv(mid, arc[last]), uv(ru(j), arc[last - 1]), uv(ru(j + 1), arc[last - 1])],
                cap.region,
            );
        }
        for (ri, pair) in rings.windows(2).enumerate() {
            let (va, vb) = (arc[ri + 1], arc[ri + 2]);
            for j in 0..RADIAL {
                let jn = (j + 1) % RADIAL;
                let (a, b, c, dd) = (pair[0][j], pair[0][jn], pair[1][j], pair[1][jn]);
                self.push_tri(
                    [a, b, dd],
                    [uv(ru(j), va), uv(ru(j + 1), va), uv(ru(j + 1), vb)],
                    cap.region,
                );
                self.push_tri(
                    [a, dd, c],
                    [uv(ru(j), va), uv(ru(j + 1), vb), uv(ru(j), vb)],
                    cap.region,
                );
            }
        }
    }

    fn push_tri(&mut self, idx: [u32; 3], uv: [[f32; 2]; 3], region: Region) {
        self.triangles.push(idx);
        self.uvs.push(uv);
        self.regions.push(region);
    }
}

/// Make the f32 weights sum to one as closely as f32 allows.
fn fix_weight_sum(mut row: SkinRow) -> SkinRow {
    if row.weights[1] > 0.0 {
        row.weights[1] = 1.0 - row.weights[0];
    }
    row
}
