use nalgebra::{Matrix3, Rotation3, UnitQuaternion, Vector3};

use super::{GeomError, ROTATION_TOLERANCE};

/// Rigid transform `x -> R x + T`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoseSE3 {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

fn check_rotation(rotation: &Matrix3<f64>) -> Result<(), GeomError> {
    let ortho = (rotation.transpose() * rotation - Matrix3::identity()).abs().max();
    let det = (rotation.determinant() - 1.0).abs();
    let err = ortho.max(det);
    if !(err <= ROTATION_TOLERANCE) {
        return Err(GeomError::NotARotation(err));
    }
    Ok(())
}

impl PoseSE3 {
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self, GeomError> {
        check_rotation(&rotation)?;
        Ok(Self {
            rotation,
            translation,
        })
    }

    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn from_translation(translation: Vector3<f64>) -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation,
        }
    }

    /// Builds a pose from a `[w, x, y, z]` quaternion (normalized internally).
    pub fn from_quaternion(q: &[f64; 4], translation: Vector3<f64>) -> Self {
        Self {
            rotation: quat_to_rotation(q),
            translation,
        }
    }

    /// Rotation about `axis` by `angle` radians followed by `translation`.
    pub fn from_axis_angle(axis: &Vector3<f64>, angle: f64, translation: Vector3<f64>) -> Self {
        let rot = Rotation3::from_axis_angle(&nalgebra::Unit::new_normalize(*axis), angle);
        Self {
            rotation: *rot.matrix(),
            translation,
        }
    }

    /// Unit quaternion `[w, x, y, z]` with non-negative `w`.
    pub fn quaternion(&self) -> [f64; 4] {
        rotation_to_quat(&self.rotation)
    }

    #[inline]
    pub fn apply(&self, point: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * point + self.translation
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        Self {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &PoseSE3) -> Self {
        Self {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    /// Position of the frame origin after inversion, i.e. the camera center
    /// when `self` maps world to camera.
    pub fn center(&self) -> Vector3<f64> {
        -(self.rotation.transpose() * self.translation)
    }

    /// Re-orthonormalizes the rotation (via its quaternion).
    pub fn renormalized(&self) -> Self {
        Self {
            rotation: quat_to_rotation(&self.quaternion()),
            translation: self.translation,
        }
    }
}

pub fn apply_pose(pose: &PoseSE3, point: &Vector3<f64>) -> Vector3<f64> {
    pose.apply(point)
}

/// Similarity transform `x -> s R x + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sim3 {
    pub scale: f64,
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl Sim3 {
    pub fn new(
        scale: f64,
        rotation: Matrix3<f64>,
        translation: Vector3<f64>,
    ) -> Result<Self, GeomError> {
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(GeomError::InvalidScale(scale));
        }
        check_rotation(&rotation)?;
        Ok(Self {
            scale,
            rotation,
            translation,
        })
    }

    pub fn identity() -> Self {
        Self {
            scale: 1.0,
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    #[inline]
    pub fn apply(&self, point: &Vector3<f64>) -> Vector3<f64> {
        self.scale * (self.rotation * point) + self.translation
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        Self {
            scale: 1.0 / self.scale,
            rotation: rt,
            translation: -(rt * self.translation) / self.scale,
        }
    }

    pub fn compose(&self, other: &Sim3) -> Self {
        Self {
            scale: self.scale * other.scale,
            rotation: self.rotation * other.rotation,
            translation: self.scale * (self.rotation * other.translation) + self.translation,
        }
    }

    /// Applies the similarity to a camera-to-world pose: rotates and scales
    /// its position, rotates its orientation.
    pub fn transform_pose(&self, cam_to_world: &PoseSE3) -> PoseSE3 {
        PoseSE3 {
            rotation: self.rotation * cam_to_world.rotation,
            translation: self.apply(&cam_to_world.translation),
        }
    }
}

/// Rotation matrix of the quaternion `[w, x, y, z]` after normalization.
pub fn quat_to_rotation(q: &[f64; 4]) -> Matrix3<f64> {
    let n = (q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]).sqrt();
    let (w, x, y, z) = (q[0] / n, q[1] / n, q[2] / n, q[3] / n);
    Matrix3::new(
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

/// Unit quaternion `[w, x, y, z]` (with `w >= 0`) of a rotation matrix.
pub fn rotation_to_quat(rotation: &Matrix3<f64>) -> [f64; 4] {
    let uq = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(*rotation));
    let q = uq.quaternion();
    let sign = if q.w < 0.0 { -1.0 } else { 1.0 };
    [sign * q.w, sign * q.i, sign * q.j, sign * q.k]
}

/// Geodesic angle of a rotation matrix, in radians.
pub fn rotation_angle(rotation: &Matrix3<f64>) -> f64 {
    // acos of the trace loses precision near zero; atan2 of (sin, cos) does not.
    let cos = ((rotation.trace() - 1.0) / 2.0).clamp(-1.0, 1.0);
    let axis = Vector3::new(
        rotation[(2, 1)] - rotation[(1, 2)],
        rotation[(0, 2)] - rotation[(2, 0)],
        rotation[(1, 0)] - rotation[(0, 1)],
    );
    let sin = axis.norm() / 2.0;
    sin.atan2(cos)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::FRAC_PI_2;

    fn arb_pose() -> impl Strategy<Value = PoseSE3> {
        (
            prop::array::uniform4(-1.0f64..1.0),
            prop::array::uniform3(-10.0f64..10.0),
        )
            .prop_filter("non-degenerate quaternion", |(q, _)| {
                q.iter().map(|c| c * c).sum::<f64>() > 1e-3
            })
            .prop_map(|(q, t)| PoseSE3::from_quaternion(&q, Vector3::from(t)))
    }

    #[test]
    fn identity_and_rotation_examples() {
        let p = Vector3::new(1.0, 2.0, 3.0);
        assert_eq!(apply_pose(&PoseSE3::identity(), &p), p);
        let rz = PoseSE3::from_axis_angle(&Vector3::z(), FRAC_PI_2, Vector3::zeros());
        let out = apply_pose(&rz, &Vector3::new(1.0, 0.0, 0.0));
        assert!((out - Vector3::new(0.0, 1.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn rejects_non_rotations() {
        let m = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, -1.0));
        assert!(PoseSE3::new(m, Vector3::zeros()).is_err());
        assert!(Sim3::new(0.0, Matrix3::identity(), Vector3::zeros()).is_err());
        assert!(Sim3::new(1.0, Matrix3::identity() * 1.01, Vector3::zeros()).is_err());
    }

    #[test]
    fn rotation_angle_small_and_large() {
        for &a in &[1e-7, 1e-3, 0.5, 3.0] {
            let p = PoseSE3::from_axis_angle(&Vector3::new(1.0, 2.0, 3.0), a, Vector3::zeros());
            assert!((rotation_angle(&p.rotation) - a).abs() < 1e-12 * a.max(1.0));
        }
    }

    proptest! {
        #[test]
        fn pose_inverse_roundtrip(pose in arb_pose(), p in prop::array::uniform3(-5.0f64..5.0)) {
            let p = Vector3::from(p);
            let back = pose.compose(&pose.inverse()).apply(&p);
            prop_assert!((back - p).norm() < 1e-9);
            let back = pose.inverse().apply(&pose.apply(&p));
            prop_assert!((back - p).norm() < 1e-9);
        }

        #[test]
        fn pose_is_isometry(
            pose in arb_pose(),
            a in prop::array::uniform3(-5.0f64..5.0),
            b in prop::array::uniform3(-5.0f64..5.0),
        ) {
            let (a, b) = (Vector3::from(a), Vector3::from(b));
            let d0 = (a - b).norm();
            let d1 = (pose.apply(&a) - pose.apply(&b)).norm();
            prop_assert!((d0 - d1).abs() < 1e-9);
        }

        #[test]
        fn compose_is_associative(a in arb_pose(), b in arb_pose(), c in arb_pose(),
                                  p in prop::array::uniform3(-5.0f64..5.0)) {
            let p = Vector3::from(p);
            let left = a.compose(&b).compose(&c).apply(&p);
            let right = a.compose(&b.compose(&c)).apply(&p);
            prop_assert!((left - right).norm() < 1e-9);
        }

        #[test]
        fn quaternion_roundtrip(pose in arb_pose()) {
            let q = pose.quaternion();
            let r = quat_to_rotation(&q);
            prop_assert!((r - pose.rotation).abs().max() < 1e-12);
            prop_assert!(PoseSE3::new(pose.rotation, pose.translation).is_ok());
        }

        #[test]
        fn sim3_inverse_roundtrip(s in 0.1f64..10.0, pose in arb_pose(),
                                  p in prop::array::uniform3(-5.0f64..5.0)) {
            let sim = Sim3::new(s, pose.rotation, pose.translation).unwrap();
            let p = Vector3::from(p);
            prop_assert!((sim.inverse().apply(&sim.apply(&p)) - p).norm() < 1e-9);
            prop_assert!((sim.compose(&sim.inverse()).apply(&p) - p).norm() < 1e-9);
        }
    }
}
