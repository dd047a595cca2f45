//! Small geometric helpers shared across modules.
//!
//! Quaternions are stored scalar-first `(w, x, y, z)` everywhere in the crate,
//! including the file formats.

use nalgebra::{Matrix3, Matrix4, Vector3};
use serde::{Deserialize, Serialize};

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;
pub type Mat4 = Matrix4<f64>;

/// Quaternion `(w, x, y, z)`. Not necessarily unit; see [`Quat::normalized`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 4]", into = "[f64; 4]")]
pub struct Quat {
    pub w: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl From<[f64; 4]> for Quat {
    fn from(v: [f64; 4]) -> Self {
        Quat::new(v[0], v[1], v[2], v[3])
    }
}

impl From<Quat> for [f64; 4] {
    fn from(q: Quat) -> Self {
        q.to_array()
    }
}

impl Quat {
    pub const IDENTITY: Quat = Quat {
        w: 1.0,
        x: 0.0,
        y: 0.0,
        z: 0.0,
    };

    pub const fn new(w: f64, x: f64, y: f64, z: f64) -> Self {
        Quat { w, x, y, z }
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.w, self.x, self.y, self.z]
    }

    pub fn from_f32(v: [f32; 4]) -> Self {
        Quat::new(v[0] as f64, v[1] as f64, v[2] as f64, v[3] as f64)
    }

    pub fn norm(self) -> f64 {
        (self.w * self.w + self.x * self.x + self.y * self.y + self.z * self.z).sqrt()
    }

    /// Unit quaternion in the same direction; the zero quaternion maps to identity.
    pub fn normalized(self) -> Self {
        let n = self.norm();
        if n == 0.0 || !n.is_finite() {
            return Quat::IDENTITY;
        }
        Quat::new(self.w / n, self.x / n, self.y / n, self.z / n)
    }

    /// Hamilton product `self ⊗ rhs`.
    pub fn mul(self, rhs: Quat) -> Quat {
        let (a, b) = (self, rhs);
        Quat::new(
            a.w * b.w - a.x * b.x - a.y * b.y - a.z * b.z,
            a.w * b.x + a.x * b.w + a.y * b.z - a.z * b.y,
            a.w * b.y - a.x * b.z + a.y * b.w + a.z * b.x,
            a.w * b.z + a.x * b.y - a.y * b.x + a.z * b.w,
        )
    }

    pub fn from_axis_angle(axis: Vec3, angle: f64) -> Quat {
        let n = axis.norm();
        if n == 0.0 || angle == 0.0 {
            return Quat::IDENTITY;
        }
        let a = axis / n;
        let (s, c) = (0.5 * angle).sin_cos();
        Quat::new(c, a.x * s, a.y * s, a.z * s)
    }

    /// Rotation vector (axis times angle in radians).
    pub fn from_rotation_vector(v: Vec3) -> Quat {
        Quat::from_axis_angle(v, v.norm())
    }

    /// Intrinsic X-then-Y-then-Z Euler angles in degrees, i.e. `R = Rx · Ry · Rz`.
    ///
    /// This is the convention the browser viewer's sliders use.
    pub fn from_euler_xyz_deg(x_deg: f64, y_deg: f64, z_deg: f64) -> Quat {
        let qx = Quat::from_axis_angle(Vec3::x(), x_deg.to_radians());
        let qy = Quat::from_axis_angle(Vec3::y(), y_deg.to_radians());
        let qz = Quat::from_axis_angle(Vec3::z(), z_deg.to_radians());
        qx.mul(qy).mul(qz)
    }

    /// Rotation matrix of the (assumed unit) quaternion.
    pub fn to_matrix(self) -> Mat3 {
        let Quat { w, x, y, z } = self;
        Mat3::new(
            1.0 - 2.0 * (y * y + z * z),
            2.0 * (x * y - w * z),
            2.0 * (x * z + w * y),
            2.0 * (x * y + w * z),
            1.0 - 2.0 * (x * x + z * z),
            2.0 * (y * z - w * x),
            2.0 * (x * z - w * y),
            2.0 * (y * z + w * x),
            1.0 - 2.0 * (x * x + y * y),
        )
    }

    /// Quaternion of a proper rotation matrix (Shepperd's method), with `w >= 0`.
    pub fn from_matrix(m: &Mat3) -> Quat {
        let trace = m[(0, 0)] + m[(1, 1)] + m[(2, 2)];
        let q = if trace > 0.0 {
            let s = (trace + 1.0).sqrt() * 2.0;
            Quat::new(
                0.25 * s,
                (m[(2, 1)] - m[(1, 2)]) / s,
                (m[(0, 2)] - m[(2, 0)]) / s,
                (m[(1, 0)] - m[(0, 1)]) / s,
            )
        } else if m[(0, 0)] > m[(1, 1)] && m[(0, 0)] > m[(2, 2)] {
            let s = (1.0 + m[(0, 0)] - m[(1, 1)] - m[(2, 2)]).sqrt() * 2.0;
            Quat::new(
                (m[(2, 1)] - m[(1, 2)]) / s,
                0.25 * s,
                (m[(0, 1)] + m[(1, 0)]) / s,
                (m[(0, 2)] + m[(2, 0)]) / s,
            )
        } else if m[(1, 1)] > m[(2, 2)] {
            let s = (1.0 + m[(1, 1)] - m[(0, 0)] - m[(2, 2)]).sqrt() * 2.0;
            Quat::new(
                (m[(0, 2)] - m[(2, 0)]) / s,
                (m[(0, 1)] + m[(1, 0)]) / s,
                0.25 * s,
                (m[(1, 2)] + m[(2, 1)]) / s,
            )
        } else {
            let s = (1.0 + m[(2, 2)] - m[(0, 0)] - m[(1, 1)]).sqrt() * 2.0;
            Quat::new(
                (m[(1, 0)] - m[(0, 1)]) / s,
                (m[(0, 2)] + m[(2, 0)]) / s,
                (m[(1, 2)] + m[(2, 1)]) / s,
                0.25 * s,
            )
        };
        let q = q.normalized();
        if q.w < 0.0 {
            Quat::new(-q.w, -q.x, -q.y, -q.z)
        } else {
            q
        }
    }

    /// Angle-aware equality up to sign (q and -q are the same rotation).
    pub fn rotation_distance(self, other: Quat) -> f64 {
        let d = (self.w * other.w + self.x * other.x + self.y * other.y + self.z * other.z).abs();
        (1.0 - d.min(1.0)).max(0.0)
    }
}

/// Nearest rotation to `m` in the Frobenius sense (polar decomposition via SVD).
pub fn nearest_rotation(m: &Mat3) -> Mat3 {
    let svd = m.svd(true, true);
    let (u, v_t) = match (svd.u, svd.v_t) {
        (Some(u), Some(v_t)) => (u, v_t),
        _ => return Mat3::identity(),
    };
    let mut r = u * v_t;
    if r.determinant() < 0.0 {
        // Flip the axis of the smallest singular value.
        let mut idx = 0;
        for i in 1..3 {
            if svd.singular_values[i] < svd.singular_values[idx] {
                idx = i;
            }
        }
        let mut u2 = u;
        for row in 0..3 {
            u2[(row, idx)] = -u2[(row, idx)];
        }
        r = u2 * v_t;
    }
    r
}

/// `‖AᵀA − I‖_F` for the linear part of a blended transform.
pub fn orthonormality_residual(a: &Mat3) -> f64 {
    (a.transpose() * a - Mat3::identity()).norm()
}

pub fn translation(t: Vec3) -> Mat4 {
    Mat4::new_translation(&t)
}

pub fn linear_part(m: &Mat4) -> Mat3 {
    m.fixed_view::<3, 3>(0, 0).into_owned()
}

/// Apply a 4x4 affine transform to a point.
pub fn transform_point(m: &Mat4, p: &Vec3) -> Vec3 {
    Vec3::new(
        m[(0, 0)] * p.x + m[(0, 1)] * p.y + m[(0, 2)] * p.z + m[(0, 3)],
        m[(1, 0)] * p.x + m[(1, 1)] * p.y + m[(1, 2)] * p.z + m[(1, 3)],
        m[(2, 0)] * p.x + m[(2, 1)] * p.y + m[(2, 2)] * p.z + m[(2, 3)],
    )
}

/// Rigid 4x4 from rotation and translation.
pub fn rigid(r: &Mat3, t: &Vec3) -> Mat4 {
    let mut m = Mat4::identity();
    m.fixed_view_mut::<3, 3>(0, 0).copy_from(r);
    m[(0, 3)] = t.x;
    m[(1, 3)] = t.y;
    m[(2, 3)] = t.z;
    m
}

pub fn to_vec3(v: [f32; 3]) -> Vec3 {
    Vec3::new(v[0] as f64, v[1] as f64, v[2] as f64)
}
