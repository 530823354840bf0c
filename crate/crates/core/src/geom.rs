//! Quaternion algebra, poses and the error metrics used across the crate.
//!
//! Quaternions are scalar-first and follow the Hamilton product convention.
//! Rotation of a vector `v` by a unit quaternion `q` is `q ⊙ (0, v) ⊙ q*`.

use std::ops::{Mul, Neg};

use nalgebra::{Matrix3, Vector3, Vector4};

use crate::error::{Error, Result};

pub type Vec3 = Vector3<f64>;

/// Tolerance on `| ||q|| - 1 |` accepted where a unit quaternion is required.
pub const UNIT_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quaternion {
    pub w: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Quaternion {
    pub const IDENTITY: Quaternion = Quaternion {
        w: 1.0,
        x: 0.0,
        y: 0.0,
        z: 0.0,
    };

    pub const fn new(w: f64, x: f64, y: f64, z: f64) -> Self {
        Self { w, x, y, z }
    }

    /// Pure quaternion `(0, v)`.
    pub fn pure(v: &Vec3) -> Self {
        Self::new(0.0, v.x, v.y, v.z)
    }

    pub fn from_vector(v: &Vector4<f64>) -> Self {
        Self::new(v[0], v[1], v[2], v[3])
    }

    pub fn to_vector(self) -> Vector4<f64> {
        Vector4::new(self.w, self.x, self.y, self.z)
    }

    pub fn vector_part(&self) -> Vec3 {
        Vec3::new(self.x, self.y, self.z)
    }

    /// Rotation of `angle` radians about `axis`. The axis need not be normalized
    /// but must be non-zero.
    pub fn from_axis_angle(axis: &Vec3, angle: f64) -> Self {
        let n = axis.norm();
        if n == 0.0 {
            return Self::IDENTITY;
        }
        let (s, c) = (0.5 * angle).sin_cos();
        let a = axis / n;
        Self::new(c, s * a.x, s * a.y, s * a.z)
    }

    /// Intrinsic X-Y-Z Euler angles in radians: `R = Rx(rx) · Ry(ry) · Rz(rz)`.
    pub fn from_euler_xyz(rx: f64, ry: f64, rz: f64) -> Self {
        let qx = Self::from_axis_angle(&Vec3::x(), rx);
        let qy = Self::from_axis_angle(&Vec3::y(), ry);
        let qz = Self::from_axis_angle(&Vec3::z(), rz);
        qx * qy * qz
    }

    pub fn norm_squared(&self) -> f64 {
        self.w * self.w + self.x * self.x + self.y * self.y + self.z * self.z
    }

    pub fn norm(&self) -> f64 {
        self.norm_squared().sqrt()
    }

    pub fn dot(&self, other: &Quaternion) -> f64 {
        self.w * other.w + self.x * other.x + self.y * other.y + self.z * other.z
    }

    pub fn conjugate(&self) -> Self {
        Self::new(self.w, -self.x, -self.y, -self.z)
    }

    pub fn scale(&self, s: f64) -> Self {
        Self::new(self.w * s, self.x * s, self.y * s, self.z * s)
    }

    pub fn normalize(&self) -> Result<Self> {
        let n = self.norm();
        if !(n > 0.0) || !n.is_finite() {
            return Err(Error::DegenerateQuaternion);
        }
        Ok(self.scale(1.0 / n))
    }

    /// Representative of the same rotation with `w >= 0`. Only used for reporting.
    pub fn canonical(&self) -> Self {
        if self.w < 0.0 {
            -*self
        } else {
            *self
        }
    }

    pub fn is_unit(&self) -> bool {
        (self.norm() - 1.0).abs() <= UNIT_TOLERANCE
    }

    /// Rotation matrix of a unit quaternion.
    pub fn to_matrix(&self) -> Result<Matrix3<f64>> {
        if !self.is_unit() {
            return Err(Error::NonUnitQuaternion(self.norm()));
        }
        Ok(self.to_matrix_unchecked())
    }

    pub(crate) fn to_matrix_unchecked(&self) -> Matrix3<f64> {
        let Quaternion { w, x, y, z } = *self;
        let (xx, yy, zz) = (x * x, y * y, z * z);
        let (xy, xz, yz) = (x * y, x * z, y * z);
        let (wx, wy, wz) = (w * x, w * y, w * z);
        Matrix3::new(
            1.0 - 2.0 * (yy + zz),
            2.0 * (xy - wz),
            2.0 * (xz + wy),
            2.0 * (xy + wz),
            1.0 - 2.0 * (xx + zz),
            2.0 * (yz - wx),
            2.0 * (xz - wy),
            2.0 * (yz + wx),
            1.0 - 2.0 * (xx + yy),
        )
    }

    /// Rotates `v`; `self` is assumed unit.
    pub fn rotate(&self, v: &Vec3) -> Vec3 {
        (*self * Self::pure(v) * self.conjugate()).vector_part()
    }
}

impl Default for Quaternion {
    fn default() -> Self {
        Self::IDENTITY
    }
}

impl Mul for Quaternion {
    type Output = Quaternion;

    /// Hamilton product.
    fn mul(self, r: Quaternion) -> Quaternion {
        let l = self;
        Quaternion::new(
            l.w * r.w - l.x * r.x - l.y * r.y - l.z * r.z,
            l.w * r.x + l.x * r.w + l.y * r.z - l.z * r.y,
            l.w * r.y - l.x * r.z + l.y * r.w + l.z * r.x,
            l.w * r.z + l.x * r.y - l.y * r.x + l.z * r.w,
        )
    }
}

impl Neg for Quaternion {
    type Output = Quaternion;

    fn neg(self) -> Quaternion {
        self.scale(-1.0)
    }
}

/// Rigid transform `p ↦ R(rotation)·p + translation`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub rotation: Quaternion,
    pub translation: Vec3,
}

impl Default for Pose {
    fn default() -> Self {
        Self::IDENTITY
    }
}

impl Pose {
    pub const IDENTITY: Pose = Pose {
        rotation: Quaternion::IDENTITY,
        translation: Vector3::new(0.0, 0.0, 0.0),
    };

    pub fn new(rotation: Quaternion, translation: Vec3) -> Result<Self> {
        if (rotation.norm() - 1.0).abs() > 1e-9 {
            return Err(Error::NonUnitQuaternion(rotation.norm()));
        }
        Ok(Self {
            rotation,
            translation,
        })
    }

    pub fn from_translation(t: Vec3) -> Self {
        Self {
            rotation: Quaternion::IDENTITY,
            translation: t,
        }
    }

    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        self.rotation.to_matrix_unchecked()
    }

    pub fn transform_point(&self, p: &Vec3) -> Vec3 {
        self.rotation_matrix() * p + self.translation
    }

    /// Maps a world point back into the frame this pose was applied to.
    pub fn inverse_transform_point(&self, p: &Vec3) -> Vec3 {
        self.rotation_matrix().transpose() * (p - self.translation)
    }

    /// `self ∘ other`: apply `other` first.
    pub fn compose(&self, other: &Pose) -> Pose {
        Pose {
            rotation: self.rotation * other.rotation,
            translation: self.rotation_matrix() * other.translation + self.translation,
        }
    }
}

/// Applies `pose` to every point.
pub fn apply_pose(pose: &Pose, pts: &[Vec3]) -> Vec<Vec3> {
    let r = pose.rotation_matrix();
    pts.iter().map(|p| r * p + pose.translation).collect()
}

/// Cross-product matrix: `skew(v) * u == v.cross(u)`.
pub fn skew(v: &Vec3) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Geodesic angle between two rotations in degrees, in `[0, 180]`.
///
/// Computed from the relative rotation with `atan2` so that angles close to
/// zero keep full precision; the sign of either input does not matter.
pub fn rotation_error_deg(q_est: &Quaternion, q_gt: &Quaternion) -> f64 {
    let rel = q_est.conjugate() * *q_gt;
    let v = rel.vector_part().norm();
    (2.0 * v.atan2(rel.w.abs())).to_degrees()
}

/// Euclidean translation error in centimeters.
pub fn translation_error_cm(t_est: &Vec3, t_gt: &Vec3) -> f64 {
    (t_est - t_gt).norm() * 100.0
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn unit_quat() -> impl Strategy<Value = Quaternion> {
        (
            -1.0f64..1.0,
            -1.0f64..1.0,
            -1.0f64..1.0,
            -1.0f64..1.0,
        )
            .prop_filter_map("near-zero", |(w, x, y, z)| {
                Quaternion::new(w, x, y, z).normalize().ok().filter(|q| {
                    Quaternion::new(w, x, y, z).norm() > 1e-3 && q.is_unit()
                })
            })
    }

    fn vec3() -> impl Strategy<Value = Vec3> {
        (-10.0f64..10.0, -10.0f64..10.0, -10.0f64..10.0).prop_map(|(x, y, z)| Vec3::new(x, y, z))
    }

    #[test]
    fn normalize_examples() {
        assert_eq!(
            Quaternion::new(2.0, 0.0, 0.0, 0.0).normalize().unwrap(),
            Quaternion::IDENTITY
        );
        assert!(matches!(
            Quaternion::new(0.0, 0.0, 0.0, 0.0).normalize(),
            Err(Error::DegenerateQuaternion)
        ));
        let q = Quaternion::new(1.0, 1.0, 1.0, 1.0).normalize().unwrap();
        assert_relative_eq!(q.to_vector(), Vector4::repeat(0.5), epsilon = 1e-15);
    }

    #[test]
    fn matrix_examples() {
        assert_eq!(
            Quaternion::IDENTITY.to_matrix().unwrap(),
            Matrix3::identity()
        );
        let h = std::f64::consts::FRAC_PI_4;
        let q = Quaternion::new(h.cos(), 0.0, 0.0, h.sin());
        let r = q.to_matrix().unwrap();
        assert_relative_eq!(r * Vec3::x(), Vec3::y(), epsilon = 1e-15);
        assert!(Quaternion::new(2.0, 0.0, 0.0, 0.0).to_matrix().is_err());
    }

    #[test]
    fn product_examples() {
        let q = Quaternion::new(0.3, -1.2, 0.7, 2.0);
        assert_eq!(q * Quaternion::IDENTITY, q);
        let p = q * q.conjugate();
        assert_relative_eq!(p.w, q.norm_squared(), epsilon = 1e-14);
        assert_relative_eq!(p.vector_part().norm(), 0.0, epsilon = 1e-14);
    }

    #[test]
    fn skew_examples() {
        assert_eq!(skew(&Vec3::zeros()), Matrix3::zeros());
        assert_eq!(skew(&Vec3::x()) * Vec3::y(), Vec3::z());
    }

    #[test]
    fn apply_pose_examples() {
        let pts = vec![Vec3::new(1.0, 2.0, 3.0), Vec3::new(-4.0, 0.5, 0.0)];
        assert_eq!(apply_pose(&Pose::IDENTITY, &pts), pts);
        let shifted = apply_pose(
            &Pose::from_translation(Vec3::new(1.0, 2.0, 3.0)),
            &[Vec3::zeros()],
        );
        assert_eq!(shifted[0], Vec3::new(1.0, 2.0, 3.0));
        let rz = Pose::new(
            Quaternion::from_axis_angle(&Vec3::z(), std::f64::consts::FRAC_PI_2),
            Vec3::zeros(),
        )
        .unwrap();
        assert_relative_eq!(apply_pose(&rz, &[Vec3::x()])[0], Vec3::y(), epsilon = 1e-15);
    }

    #[test]
    fn rotation_error_examples() {
        let q = Quaternion::new(0.2, 0.4, -0.1, 0.3).normalize().unwrap();
        assert!(rotation_error_deg(&q, &q) < 1e-12);
        assert!(rotation_error_deg(&q, &-q) < 1e-12);
        assert_eq!(rotation_error_deg(&Quaternion::IDENTITY, &Quaternion::IDENTITY), 0.0);
        let r30 = Quaternion::from_axis_angle(&Vec3::z(), 30f64.to_radians());
        assert_relative_eq!(
            rotation_error_deg(&Quaternion::IDENTITY, &r30),
            30.0,
            epsilon = 1e-12
        );
    }

    #[test]
    fn euler_is_intrinsic_xyz() {
        let (a, b, c) = (0.3, -0.2, 0.5);
        let q = Quaternion::from_euler_xyz(a, b, c);
        let rx = nalgebra::Rotation3::from_axis_angle(&Vector3::x_axis(), a);
        let ry = nalgebra::Rotation3::from_axis_angle(&Vector3::y_axis(), b);
        let rz = nalgebra::Rotation3::from_axis_angle(&Vector3::z_axis(), c);
        let expected = rx * ry * rz;
        assert_relative_eq!(q.to_matrix().unwrap(), *expected.matrix(), epsilon = 1e-14);
    }

    proptest! {
        #[test]
        fn rotation_is_isometry(q in unit_quat(), v in vec3()) {
            let r = q.to_matrix().unwrap();
            prop_assert!(((r * v).norm() - v.norm()).abs() < 1e-9);
            prop_assert!((r.determinant() - 1.0).abs() < 1e-9);
            prop_assert!((r.transpose() * r - Matrix3::identity()).amax() < 1e-9);
            prop_assert!((r - (-q).to_matrix().unwrap()).amax() < 1e-15);
            prop_assert!((q.rotate(&v) - r * v).amax() < 1e-9);
        }

        #[test]
        fn product_matches_matrix_composition(q1 in unit_quat(), q2 in unit_quat()) {
            let lhs = (q1 * q2).to_matrix().unwrap();
            let rhs = q1.to_matrix().unwrap() * q2.to_matrix().unwrap();
            prop_assert!((lhs - rhs).amax() < 1e-9);
            prop_assert!(((q1 * q2).norm() - q1.norm() * q2.norm()).abs() < 1e-12);
        }

        #[test]
        fn skew_is_cross_product(v in vec3(), u in vec3()) {
            let s = skew(&v);
            prop_assert_eq!(s.transpose(), -s);
            prop_assert!((s * u - v.cross(&u)).amax() < 1e-12);
            prop_assert!((s * v).amax() < 1e-12);
        }

        #[test]
        fn rotation_error_is_symmetric_metric(q1 in unit_quat(), q2 in unit_quat()) {
            let d12 = rotation_error_deg(&q1, &q2);
            let d21 = rotation_error_deg(&q2, &q1);
            prop_assert!((d12 - d21).abs() < 1e-9);
            prop_assert!((0.0..=180.0).contains(&d12));
            prop_assert!(rotation_error_deg(&q1, &-q1) < 1e-9);
        }
    }
}
