//! Rigid-body primitives shared by the residual, solver and evaluation code.
//!
//! Tangent increments are ordered `[δt; δθ]`: columns 0–2 of every Jacobian
//! are translation, columns 3–5 rotation. Rotation increments are applied on
//! the right, `R ← R·Exp(δθ)`, translation increments additively.

use nalgebra::{Matrix3, UnitQuaternion, Vector3, Vector6};

/// A 6-DoF rigid transform mapping sensor-frame points into the world frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub rotation: UnitQuaternion<f64>,
    pub translation: Vector3<f64>,
}

impl Default for Pose {
    fn default() -> Self {
        Self::identity()
    }
}

impl Pose {
    pub fn identity() -> Self {
        Self {
            rotation: UnitQuaternion::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn new(rotation: UnitQuaternion<f64>, translation: Vector3<f64>) -> Self {
        Self {
            rotation,
            translation,
        }
    }

    /// Builds a pose from a translation and an axis-angle vector.
    pub fn from_parts(translation: Vector3<f64>, axis_angle: Vector3<f64>) -> Self {
        Self {
            rotation: UnitQuaternion::from_scaled_axis(axis_angle),
            translation,
        }
    }

    /// Pose from roll/pitch/yaw Euler angles (radians) and translation.
    pub fn from_euler(translation: Vector3<f64>, roll: f64, pitch: f64, yaw: f64) -> Self {
        Self {
            rotation: UnitQuaternion::from_euler_angles(roll, pitch, yaw),
            translation,
        }
    }

    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        *self.rotation.to_rotation_matrix().matrix()
    }

    /// `R·p + t`.
    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    /// `self ∘ other`: apply `other` first, then `self`.
    pub fn compose(&self, other: &Pose) -> Pose {
        Pose {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> Pose {
        let inv = self.rotation.inverse();
        Pose {
            rotation: inv,
            translation: -(inv * self.translation),
        }
    }

    /// Right-multiplicative retraction: `R·Exp(δθ)`, `t + δt`.
    pub fn retract(&self, delta: &TangentDelta) -> Pose {
        let mut rotation = self.rotation * UnitQuaternion::from_scaled_axis(delta.d_rotation);
        rotation.renormalize();
        Pose {
            rotation,
            translation: self.translation + delta.d_translation,
        }
    }

    /// Rotation angle of this pose, radians in `[0, π]`.
    pub fn rotation_angle(&self) -> f64 {
        self.rotation.angle()
    }
}

/// Local increment on the pose manifold, ordered `[δt; δθ]`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct TangentDelta {
    pub d_translation: Vector3<f64>,
    pub d_rotation: Vector3<f64>,
}

impl TangentDelta {
    pub fn zero() -> Self {
        Self::default()
    }

    pub fn new(d_translation: Vector3<f64>, d_rotation: Vector3<f64>) -> Self {
        Self {
            d_translation,
            d_rotation,
        }
    }

    pub fn from_vector(v: &Vector6<f64>) -> Self {
        Self {
            d_translation: Vector3::new(v[0], v[1], v[2]),
            d_rotation: Vector3::new(v[3], v[4], v[5]),
        }
    }

    pub fn to_vector(&self) -> Vector6<f64> {
        let (t, r) = (&self.d_translation, &self.d_rotation);
        Vector6::new(t.x, t.y, t.z, r.x, r.y, r.z)
    }

    pub fn norm(&self) -> f64 {
        self.to_vector().norm()
    }
}

/// Skew-symmetric matrix `v^∧` such that `v^∧ w = v × w`.
pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

pub fn transform_point(pose: &Pose, p: &Vector3<f64>) -> Vector3<f64> {
    pose.transform_point(p)
}

pub fn retract(pose: &Pose, delta: &TangentDelta) -> Pose {
    pose.retract(delta)
}
