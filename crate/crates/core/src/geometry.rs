//! 4-DoF (x, y, z, yaw) and 6-DoF pose algebra.
//!
//! Roll and pitch are observable from gravity, so the estimator only carries
//! position and yaw. Full rotations are kept around for lifting estimates back
//! to 6-DoF and for the gravity check of the loop detector.

use std::f64::consts::{PI, TAU};

use nalgebra::{Matrix3, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

/// Wraps an angle into (-pi, pi].
pub fn wrap_angle(a: f64) -> f64 {
    if a > -PI && a <= PI {
        return a;
    }
    let mut w = a.rem_euclid(TAU);
    if w > PI {
        w -= TAU;
    }
    // rem_euclid can land exactly on -pi for inputs like -pi - 2k*pi
    if w <= -PI {
        w += TAU;
    }
    w
}

/// Rotation about +z by `yaw`.
pub fn rotz(yaw: f64) -> Rot3 {
    let (s, c) = yaw.sin_cos();
    Rot3(Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0))
}

/// Applies `rotz(yaw)^T` to `v` without building the matrix.
#[inline]
pub fn rotate_z_inv(yaw: f64, v: &Vector3<f64>) -> Vector3<f64> {
    let (s, c) = yaw.sin_cos();
    Vector3::new(c * v.x + s * v.y, -s * v.x + c * v.y, v.z)
}

/// Applies `rotz(yaw)` to `v`.
#[inline]
pub fn rotate_z(yaw: f64, v: &Vector3<f64>) -> Vector3<f64> {
    let (s, c) = yaw.sin_cos();
    Vector3::new(c * v.x - s * v.y, s * v.x + c * v.y, v.z)
}

/// Derivative of `rotate_z_inv(yaw, v)` with respect to `yaw`.
#[inline]
pub fn rotate_z_inv_dyaw(yaw: f64, v: &Vector3<f64>) -> Vector3<f64> {
    let (s, c) = yaw.sin_cos();
    Vector3::new(-s * v.x + c * v.y, -c * v.x - s * v.y, 0.0)
}

/// Yaw extracted from a rotation, with a flag for the degenerate case where
/// the body x-axis is (anti)parallel to gravity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct YawExtraction {
    pub yaw: f64,
    pub degenerate: bool,
}

/// A 3x3 rotation matrix.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rot3(pub Matrix3<f64>);

impl Rot3 {
    pub fn identity() -> Self {
        Rot3(Matrix3::identity())
    }

    /// Rotation from ZYX Euler angles: `rotz(yaw) * roty(pitch) * rotx(roll)`.
    pub fn from_euler(roll: f64, pitch: f64, yaw: f64) -> Self {
        let (sr, cr) = roll.sin_cos();
        let (sp, cp) = pitch.sin_cos();
        let rx = Matrix3::new(1.0, 0.0, 0.0, 0.0, cr, -sr, 0.0, sr, cr);
        let ry = Matrix3::new(cp, 0.0, sp, 0.0, 1.0, 0.0, -sp, 0.0, cp);
        Rot3(rotz(yaw).0 * ry * rx)
    }

    /// Rotation of `angle` radians about the (not necessarily unit) `axis`.
    pub fn from_axis_angle(axis: &Vector3<f64>, angle: f64) -> Self {
        let n = axis.norm();
        if n == 0.0 || angle == 0.0 {
            return Self::identity();
        }
        let k = axis / n;
        let kx = Matrix3::new(0.0, -k.z, k.y, k.z, 0.0, -k.x, -k.y, k.x, 0.0);
        let (s, c) = angle.sin_cos();
        Rot3(Matrix3::identity() + kx * s + kx * kx * (1.0 - c))
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    pub fn transpose(&self) -> Self {
        Rot3(self.0.transpose())
    }

    pub fn mul(&self, other: &Rot3) -> Rot3 {
        Rot3(self.0 * other.0)
    }

    pub fn apply(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.0 * v
    }

    /// Rotation angle in [0, pi].
    pub fn angle(&self) -> f64 {
        let c = ((self.0.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
        c.acos()
    }

    /// Angle between the rotated z-axis and +z.
    pub fn tilt(&self) -> f64 {
        self.0[(2, 2)].clamp(-1.0, 1.0).acos()
    }

    pub fn is_valid(&self, tol: f64) -> bool {
        let r = &self.0;
        (r.transpose() * r - Matrix3::identity()).abs().max() <= tol
            && (r.determinant() - 1.0).abs() <= tol
    }

    pub fn to_quaternion(&self) -> UnitQuaternion<f64> {
        UnitQuaternion::from_matrix(&self.0)
    }
}

/// Yaw of a rotation: heading of its x-axis projected onto the horizontal
/// plane, in (-pi, pi].
pub fn yaw_of(r: &Rot3) -> f64 {
    yaw_of_checked(r).yaw
}

/// Like [`yaw_of`] but reports when the projection is degenerate. A
/// degenerate input yields yaw 0.
pub fn yaw_of_checked(r: &Rot3) -> YawExtraction {
    let (x, y) = (r.0[(0, 0)], r.0[(1, 0)]);
    if x.hypot(y) < 1e-12 {
        return YawExtraction {
            yaw: 0.0,
            degenerate: true,
        };
    }
    YawExtraction {
        yaw: wrap_angle(y.atan2(x)),
        degenerate: false,
    }
}

/// Position plus yaw.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose4 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub yaw: f64,
}

impl Default for Pose4 {
    fn default() -> Self {
        Self::identity()
    }
}

impl Pose4 {
    /// Builds a pose; yaw is wrapped.
    pub fn new(x: f64, y: f64, z: f64, yaw: f64) -> Self {
        Pose4 {
            x,
            y,
            z,
            yaw: wrap_angle(yaw),
        }
    }

    pub fn identity() -> Self {
        Pose4 {
            x: 0.0,
            y: 0.0,
            z: 0.0,
            yaw: 0.0,
        }
    }

    pub fn from_translation(t: Vector3<f64>, yaw: f64) -> Self {
        Self::new(t.x, t.y, t.z, yaw)
    }

    pub fn translation(&self) -> Vector3<f64> {
        Vector3::new(self.x, self.y, self.z)
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite() && self.yaw.is_finite()
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.x, self.y, self.z, self.yaw]
    }

    /// Largest absolute component difference, yaw difference wrapped.
    pub fn max_diff(&self, other: &Pose4) -> f64 {
        (self.x - other.x)
            .abs()
            .max((self.y - other.y).abs())
            .max((self.z - other.z).abs())
            .max(wrap_angle(self.yaw - other.yaw).abs())
    }

    pub fn compose(&self, other: &Pose4) -> Pose4 {
        compose4(self, other)
    }

    pub fn inverse(&self) -> Pose4 {
        inverse4(self)
    }
}

/// `a * b`: translation `rotz(a.yaw) * b.X + a.X`, yaw `a.yaw + b.yaw`.
pub fn compose4(a: &Pose4, b: &Pose4) -> Pose4 {
    let t = rotate_z(a.yaw, &b.translation()) + a.translation();
    Pose4::from_translation(t, a.yaw + b.yaw)
}

pub fn inverse4(a: &Pose4) -> Pose4 {
    let t = -rotate_z_inv(a.yaw, &a.translation());
    Pose4::from_translation(t, -a.yaw)
}

/// `a^-1 * b`, the pose of `b` seen from `a`.
pub fn relative4(a: &Pose4, b: &Pose4) -> Pose4 {
    let t = rotate_z_inv(a.yaw, &(b.translation() - a.translation()));
    Pose4::from_translation(t, b.yaw - a.yaw)
}

/// Full rigid transform.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose6 {
    pub rotation: Rot3,
    pub translation: Vector3<f64>,
}

impl Pose6 {
    pub fn identity() -> Self {
        Pose6 {
            rotation: Rot3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn new(rotation: Rot3, translation: Vector3<f64>) -> Self {
        Pose6 {
            rotation,
            translation,
        }
    }

    pub fn compose(&self, other: &Pose6) -> Pose6 {
        Pose6 {
            rotation: self.rotation.mul(&other.rotation),
            translation: self.rotation.apply(&other.translation) + self.translation,
        }
    }

    pub fn inverse(&self) -> Pose6 {
        let rt = self.rotation.transpose();
        Pose6 {
            rotation: rt,
            translation: -rt.apply(&self.translation),
        }
    }

    /// 4-DoF projection: same translation, yaw of the rotation.
    pub fn to_pose4(&self) -> Pose4 {
        Pose4::from_translation(self.translation, yaw_of(&self.rotation))
    }

    /// Removes yaw, keeping roll/pitch: `rotz(-yaw) * R`.
    pub fn tilt_only(&self) -> Rot3 {
        rotz(-yaw_of(&self.rotation)).mul(&self.rotation)
    }
}

/// Combines a 4-DoF estimate with the drone's own VIO attitude: the VIO
/// rotation is corrected by the yaw difference between estimate and VIO, the
/// translation is taken from the estimate.
pub fn lift_to_6dof(p4: &Pose4, vio6: &Pose6, vio4: &Pose4) -> Pose6 {
    Pose6 {
        rotation: rotz(p4.yaw - vio4.yaw).mul(&vio6.rotation),
        translation: p4.translation(),
    }
}
