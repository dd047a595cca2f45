//! Parametric body template: canonical mesh, UV layout, kinematic tree,
//! skinning weights and linear shape blendshapes.
//!
//! Real SMPL-X assets are license-bound and not shipped; [`make_toy_template`]
//! generates a deterministic capsule-chain humanoid instead. Converting real
//! assets into the `.btpl` container is left to an external tool.

mod format;
mod toy;

pub use format::{load_template, save_template, template_from_bytes, template_to_bytes, MAGIC};
pub use toy::{make_toy_template, toy_humanoid};

use crate::math::{rigid, to_vec3, Mat4, Quat, Vec3};
use crate::weights::JointWeights;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TemplateError {
    #[error("bad magic: not a BTPL1 template")]
    BadMagic,
    #[error("count mismatch: {0}")]
    CountMismatch(String),
    #[error("invariant violation: {0}")]
    InvariantViolation(String),
    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("invalid pose: {0}")]
    InvalidPose(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Per-triangle region label. Hand and face Gaussians keep template weights.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Region {
    Body = 0,
    Hand = 1,
    Face = 2,
}

impl Region {
    pub fn from_u8(v: u8) -> Option<Region> {
        match v {
            0 => Some(Region::Body),
            1 => Some(Region::Hand),
            2 => Some(Region::Face),
            _ => None,
        }
    }
}

/// Raw per-vertex skin row as stored in the container. Unused slots have weight 0.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct SkinRow {
    pub joints: [u32; 4],
    pub weights: [f32; 4],
}

impl SkinRow {
    pub fn sum(&self) -> f64 {
        self.weights.iter().map(|&w| w as f64).sum()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BodyTemplate {
    /// Canonical rest positions, meters.
    pub vertices: Vec<[f32; 3]>,
    pub triangles: Vec<[u32; 3]>,
    /// Per-corner UV coordinates in `[0,1]²`.
    pub uv_corners: Vec<[[f32; 2]; 3]>,
    /// Parent joint, `None` for the root.
    pub parents: Vec<Option<usize>>,
    pub rest_joints: Vec<[f32; 3]>,
    pub skin: Vec<SkinRow>,
    /// `S` blendshapes of `V` displacement vectors (meters per unit coefficient).
    pub shape_blendshapes: Vec<Vec<[f32; 3]>>,
    pub region_labels: Vec<Region>,
    pub joint_names: Vec<String>,
}

/// Shape coefficients `β`, one per template blendshape.
#[derive(Clone, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct ShapeParams {
    pub beta: Vec<f64>,
}

impl ShapeParams {
    pub fn zeros(n: usize) -> Self {
        ShapeParams { beta: vec![0.0; n] }
    }

    pub fn is_zero(&self) -> bool {
        self.beta.iter().all(|&b| b == 0.0)
    }
}

/// Root translation plus one local rotation per joint, relative to rest.
#[derive(Clone, Debug, PartialEq)]
pub struct Pose {
    pub root_translation: Vec3,
    pub joint_rotations: Vec<Quat>,
}

impl Pose {
    pub fn identity(joint_count: usize) -> Self {
        Pose {
            root_translation: Vec3::zeros(),
            joint_rotations: vec![Quat::IDENTITY; joint_count],
        }
    }

    pub fn validate(&self, joint_count: usize) -> Result<(), TemplateError> {
        if self.joint_rotations.len() != joint_count {
            return Err(TemplateError::InvalidPose(format!(
                "{} rotations for {} joints",
                self.joint_rotations.len(),
                joint_count
            )));
        }
        if !self.root_translation.iter().all(|v| v.is_finite()) {
            return Err(TemplateError::InvalidPose("non-finite root translation".into()));
        }
        for (i, q) in self.joint_rotations.iter().enumerate() {
            if !((q.norm() - 1.0).abs() <= 1e-6) {
                return Err(TemplateError::InvalidPose(format!(
                    "joint {i} rotation not unit-norm (|q| = {})",
                    q.norm()
                )));
            }
        }
        Ok(())
    }
}

/// Rest-relative rigid transforms `Bᵢ = Gᵢ(pose) · Gᵢ(rest)⁻¹`, one per joint.
#[derive(Clone, Debug, PartialEq)]
pub struct JointTransforms {
    pub transforms: Vec<Mat4>,
}

impl JointTransforms {
    pub fn identity(joint_count: usize) -> Self {
        JointTransforms {
            transforms: vec![Mat4::identity(); joint_count],
        }
    }

    pub fn len(&self) -> usize {
        self.transforms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transforms.is_empty()
    }

    /// Largest deviation of any linear part from a proper rotation.
    pub fn max_rigidity_error(&self) -> f64 {
        self.transforms
            .iter()
            .map(|b| {
                let r = crate::math::linear_part(b);
                let ortho = crate::math::orthonormality_residual(&r);
                ortho.max((r.determinant() - 1.0).abs())
            })
            .fold(0.0, f64::max)
    }
}

impl BodyTemplate {
    pub fn vertex_count(&self) -> usize {
        self.vertices.len()
    }

    pub fn triangle_count(&self) -> usize {
        self.triangles.len()
    }

    pub fn joint_count(&self) -> usize {
        self.parents.len()
    }

    pub fn shape_count(&self) -> usize {
        self.shape_blendshapes.len()
    }

    pub fn root(&self) -> Option<usize> {
        self.parents.iter().position(|p| p.is_none())
    }

    /// Skin weights of vertex `v` promoted to f64 and renormalized.
    pub fn vertex_weights(&self, v: usize) -> JointWeights {
        let row = &self.skin[v];
        JointWeights::top4(
            row.joints
                .iter()
                .zip(row.weights.iter())
                .map(|(&j, &w)| (j, w as f64)),
        )
        .unwrap_or_else(|| JointWeights::single(self.root().unwrap_or(0) as u32))
    }

    pub fn rest_joint(&self, j: usize) -> Vec3 {
        to_vec3(self.rest_joints[j])
    }

    pub fn base_vertices(&self) -> Vec<Vec3> {
        self.vertices.iter().map(|&v| to_vec3(v)).collect()
    }

    /// Joints ordered so every parent precedes its children.
    pub fn joint_order(&self) -> Vec<usize> {
        let n = self.joint_count();
        let mut children = vec![Vec::new(); n];
        let mut order = Vec::with_capacity(n);
        for (i, p) in self.parents.iter().enumerate() {
            match p {
                Some(p) if *p < n => children[*p].push(i),
                Some(_) => {}
                None => order.push(i),
            }
        }
        let mut head = 0;
        while head < order.len() {
            let j = order[head];
            order.extend(children[j].iter().copied());
            head += 1;
        }
        order
    }

    /// Number of joints on the longest root-to-leaf path.
    pub fn tree_depth(&self) -> usize {
        let mut depth = vec![0usize; self.joint_count()];
        for j in self.joint_order() {
            depth[j] = match self.parents[j] {
                Some(p) => depth[p] + 1,
                None => 1,
            };
        }
        depth.into_iter().max().unwrap_or(0)
    }

    /// Check every structural invariant of the template.
    pub fn validate(&self) -> Result<(), TemplateError> {
        let v = self.vertex_count();
        let n_b = self.joint_count();
        let fail = |msg: String| Err(TemplateError::InvariantViolation(msg));

        if n_b == 0 {
            return fail("template has no joints".into());
        }
        if self.rest_joints.len() != n_b || self.joint_names.len() != n_b {
            return fail(format!(
                "joint arrays disagree: {} parents, {} rest joints, {} names",
                n_b,
                self.rest_joints.len(),
                self.joint_names.len()
            ));
        }
        let roots = self.parents.iter().filter(|p| p.is_none()).count();
        if roots != 1 {
            return fail(format!("kinematic tree must have exactly one root, found {roots}"));
        }
        for (j, p) in self.parents.iter().enumerate() {
            if let Some(p) = p {
                if *p >= n_b {
                    return fail(format!("joint {j} parent {p} out of range"));
                }
            }
        }
        if self.joint_order().len() != n_b {
            return fail("parents do not form an acyclic single-rooted tree".into());
        }
        if self.skin.len() != v {
            return fail(format!("{} skin rows for {v} vertices", self.skin.len()));
        }
        for (i, row) in self.skin.iter().enumerate() {
            for (&j, &w) in row.joints.iter().zip(row.weights.iter()) {
                if !(w >= 0.0) || !w.is_finite() {
                    return fail(format!("vertex {i} has negative or non-finite weight {w}"));
                }
                if w > 0.0 && (j as usize) >= n_b {
                    return fail(format!("vertex {i} weights joint {j} >= {n_b}"));
                }
            }
            let s = row.sum();
            if (s - 1.0).abs() > 1e-6 {
                return fail(format!("vertex {i} weights sum to {s}, not 1"));
            }
        }
        for (t, tri) in self.triangles.iter().enumerate() {
            if tri.iter().any(|&idx| idx as usize >= v) {
                return fail(format!("triangle {t} index out of range ({tri:?}, V={v})"));
            }
        }
        if self.uv_corners.len() != self.triangle_count() {
            return fail(format!(
                "{} UV corner triples for {} triangles",
                self.uv_corners.len(),
                self.triangle_count()
            ));
        }
        for (t, corners) in self.uv_corners.iter().enumerate() {
            for uv in corners {
                if !uv.iter().all(|&c| (0.0..=1.0).contains(&c)) {
                    return fail(format!("triangle {t} UV {uv:?} outside [0,1]²"));
                }
            }
        }
        if self.region_labels.len() != self.triangle_count() {
            return fail(format!(
                "{} region labels for {} triangles",
                self.region_labels.len(),
                self.triangle_count()
            ));
        }
        for (s, shape) in self.shape_blendshapes.iter().enumerate() {
            if shape.len() != v {
                return fail(format!("blendshape {s} has {} deltas for {v} vertices", shape.len()));
            }
        }
        let finite = |p: &[f32; 3]| p.iter().all(|c| c.is_finite());
        if !self.vertices.iter().all(finite) || !self.rest_joints.iter().all(finite) {
            return fail("non-finite vertex or joint position".into());
        }
        if !self.shape_blendshapes.iter().flatten().all(finite) {
            return fail("non-finite blendshape delta".into());
        }
        Ok(())
    }

    /// `v = v̄ + Σₛ βₛ·Sₛ`. Zero coefficients are skipped, so `β = 0` returns
    /// the base vertices exactly.
    pub fn apply_shape(&self, shape: &ShapeParams) -> Result<Vec<Vec3>, TemplateError> {
        if shape.beta.len() != self.shape_count() {
            return Err(TemplateError::LengthMismatch {
                expected: self.shape_count(),
                got: shape.beta.len(),
            });
        }
        let mut out = self.base_vertices();
        for (coef, deltas) in shape.beta.iter().zip(&self.shape_blendshapes) {
            if *coef == 0.0 {
                continue;
            }
            for (v, d) in out.iter_mut().zip(deltas) {
                *v += to_vec3(*d) * *coef;
            }
        }
        Ok(out)
    }

    /// Compose local joint rotations root-to-leaf into rest-relative transforms.
    ///
    /// Each joint contributes `Lᵢ = T(jᵢ)·Rᵢ·T(−jᵢ)` (rotation about its rest
    /// position); `Bᵢ = B_parent · Lᵢ` and the root gets the root translation.
    /// With identity rotations every `Lᵢ` is exactly the identity matrix.
    pub fn forward_kinematics(&self, pose: &Pose) -> Result<JointTransforms, TemplateError> {
        pose.validate(self.joint_count())?;
        let mut out = vec![Mat4::identity(); self.joint_count()];
        for j in self.joint_order() {
            let r = pose.joint_rotations[j].to_matrix();
            let rest = self.rest_joint(j);
            let local = rigid(&r, &(rest - r * rest));
            out[j] = match self.parents[j] {
                Some(p) => out[p] * local,
                None => crate::math::translation(pose.root_translation) * local,
            };
        }
        Ok(JointTransforms { transforms: out })
    }

    /// Axis-aligned bounds of a vertex set.
    pub fn bounds(vertices: &[Vec3]) -> Option<(Vec3, Vec3)> {
        let first = vertices.first()?;
        let mut lo = *first;
        let mut hi = *first;
        for v in vertices {
            lo = lo.inf(v);
            hi = hi.sup(v);
        }
        Some((lo, hi))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::transform_point;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    /// Two joints at the origin and (1,0,0); one bone to (2,0,0) driven by joint 1.
    pub(crate) fn two_joint_chain() -> BodyTemplate {
        BodyTemplate {
            vertices: vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [2.0, 0.0, 0.0]],
            triangles: vec![[0, 1, 2]],
            uv_corners: vec![[[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]],
            parents: vec![None, Some(0)],
            rest_joints: vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0]],
            skin: vec![
                SkinRow { joints: [0, 0, 0, 0], weights: [1.0, 0.0, 0.0, 0.0] },
                SkinRow { joints: [1, 0, 0, 0], weights: [1.0, 0.0, 0.0, 0.0] },
                SkinRow { joints: [1, 0, 0, 0], weights: [1.0, 0.0, 0.0, 0.0] },
            ],
            shape_blendshapes: vec![vec![[0.0, 0.1, 0.0]; 3]],
            region_labels: vec![Region::Body],
            joint_names: vec!["root".into(), "tip".into()],
        }
    }

    #[test]
    fn identity_pose_is_exact_identity() {
        let t = toy_humanoid();
        let b = t.forward_kinematics(&Pose::identity(t.joint_count())).unwrap();
        for m in &b.transforms {
            assert_eq!(*m, Mat4::identity());
        }
    }

    #[test]
    fn rotating_second_joint_moves_tip() {
        let t = two_joint_chain();
        let mut pose = Pose::identity(2);
        pose.joint_rotations[1] = Quat::from_axis_angle(Vec3::z(), std::f64::consts::FRAC_PI_2);
        let b = t.forward_kinematics(&pose).unwrap();
        let tip = transform_point(&b.transforms[1], &Vec3::new(2.0, 0.0, 0.0));
        assert_relative_eq!(tip, Vec3::new(1.0, 1.0, 0.0), epsilon = 1e-12);
    }

    #[test]
    fn root_translation_offsets_every_joint() {
        let t = toy_humanoid();
        let mut pose = Pose::identity(t.joint_count());
        pose.root_translation = Vec3::new(0.0, 0.0, 0.5);
        let b = t.forward_kinematics(&pose).unwrap();
        let expected = crate::math::translation(Vec3::new(0.0, 0.0, 0.5));
        for m in &b.transforms {
            assert_eq!(*m, expected);
        }
    }

    #[test]
    fn apply_shape_zero_and_construction() {
        let t = two_joint_chain();
        let zero = t.apply_shape(&ShapeParams::zeros(1)).unwrap();
        assert_eq!(zero, t.base_vertices());
        let shifted = t.apply_shape(&ShapeParams { beta: vec![1.0] }).unwrap();
        for (s, b) in shifted.iter().zip(t.base_vertices()) {
            assert_relative_eq!(s.y, b.y + 0.1, epsilon = 1e-7);
            assert_eq!(s.x, b.x);
        }
        assert!(matches!(
            t.apply_shape(&ShapeParams { beta: vec![1.0, 2.0] }),
            Err(TemplateError::LengthMismatch { expected: 1, got: 2 })
        ));
    }

    #[test]
    fn unnormalized_pose_rejected() {
        let t = two_joint_chain();
        let mut pose = Pose::identity(2);
        pose.joint_rotations[0] = Quat::new(1.0, 0.1, 0.0, 0.0);
        assert!(matches!(t.forward_kinematics(&pose), Err(TemplateError::InvalidPose(_))));
    }

    #[test]
    fn validate_catches_cycles_and_two_roots() {
        let mut t = two_joint_chain();
        t.parents = vec![None, None];
        assert!(t.validate().is_err());
        t.parents = vec![Some(1), Some(0)];
        assert!(t.validate().is_err());
        let mut t = two_joint_chain();
        t.triangles[0][2] = 9;
        assert!(t.validate().is_err());
        let mut t = two_joint_chain();
        t.uv_corners[0][0] = [1.5, 0.0];
        assert!(t.validate().is_err());
    }

    fn random_pose(t: &BodyTemplate, seed: &[f64]) -> Pose {
        let mut pose = Pose::identity(t.joint_count());
        for (j, q) in pose.joint_rotations.iter_mut().enumerate() {
            let k = 3 * j;
            *q = Quat::from_rotation_vector(Vec3::new(seed[k % seed.len()], seed[(k + 1) % seed.len()], seed[(k + 2) % seed.len()]));
        }
        pose.root_translation = Vec3::new(seed[0], seed[1] * 0.5, seed[2] * 0.25);
        pose
    }

    proptest! {
        #[test]
        fn pre_rotating_root_left_multiplies_every_transform(
            seed in proptest::collection::vec(-1.5f64..1.5, 6..16),
            axis in proptest::array::uniform3(-1.0f64..1.0),
            angle in -3.0f64..3.0,
        ) {
            prop_assume!(axis.iter().map(|a| a * a).sum::<f64>() > 1e-2);
            let t = toy_humanoid();
            let root = t.root().unwrap();
            let pose = random_pose(&t, &seed);
            let q = Quat::from_axis_angle(Vec3::from(axis), angle);
            let mut rotated = pose.clone();
            rotated.joint_rotations[root] = q.mul(pose.joint_rotations[root]);
            // Root rotation acts about the root's rest position after translation.
            let c = t.rest_joint(root) + pose.root_translation;
            let qm = crate::math::translation(c)
                * rigid(&q.to_matrix(), &Vec3::zeros())
                * crate::math::translation(-c);
            let b0 = t.forward_kinematics(&pose).unwrap();
            let b1 = t.forward_kinematics(&rotated).unwrap();
            for (m0, m1) in b0.transforms.iter().zip(&b1.transforms) {
                prop_assert!((qm * m0 - m1).abs().max() < 1e-6);
            }
            prop_assert!(b1.max_rigidity_error() < 1e-5);
        }

        #[test]
        fn apply_shape_is_linear(b1 in proptest::collection::vec(-3.0f64..3.0, 2), b2 in proptest::collection::vec(-3.0f64..3.0, 2)) {
            let t = toy_humanoid();
            let base = t.base_vertices();
            let s1 = t.apply_shape(&ShapeParams { beta: b1.clone() }).unwrap();
            let s2 = t.apply_shape(&ShapeParams { beta: b2.clone() }).unwrap();
            let sum: Vec<f64> = b1.iter().zip(&b2).map(|(a, b)| a + b).collect();
            let s12 = t.apply_shape(&ShapeParams { beta: sum }).unwrap();
            for i in 0..base.len() {
                let lhs = s1[i] + s2[i] - base[i];
                prop_assert!((lhs - s12[i]).abs().max() < 1e-7);
            }
        }
    }
}
