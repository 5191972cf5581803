use nalgebra::{Matrix3, Quaternion, UnitQuaternion};

use super::Vec3;

/// Rigid transform `x -> R x + t`, rotation stored as a unit quaternion.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    rotation: UnitQuaternion<f64>,
    translation: Vec3,
}

impl Default for RigidTransform {
    fn default() -> Self {
        Self::identity()
    }
}

impl RigidTransform {
    pub fn identity() -> Self {
        Self {
            rotation: UnitQuaternion::identity(),
            translation: Vec3::zeros(),
        }
    }

    pub fn new(rotation: UnitQuaternion<f64>, translation: Vec3) -> Self {
        Self {
            rotation,
            translation,
        }
    }

    pub fn from_translation(translation: Vec3) -> Self {
        Self::new(UnitQuaternion::identity(), translation)
    }

    /// Rotation of `angle` radians about `axis` (need not be normalized),
    /// followed by `translation`.
    pub fn from_axis_angle(axis: &Vec3, angle: f64, translation: Vec3) -> Self {
        let rotation = match nalgebra::Unit::try_new(*axis, 1e-300) {
            Some(a) => UnitQuaternion::from_axis_angle(&a, angle),
            None => UnitQuaternion::identity(),
        };
        Self::new(rotation, translation)
    }

    /// Rotation given as a rotation vector (axis * angle).
    pub fn from_rotation_vector(rv: &Vec3, translation: Vec3) -> Self {
        Self::new(UnitQuaternion::from_scaled_axis(*rv), translation)
    }

    /// Builds from `(w, x, y, z)` quaternion components; the quaternion is
    /// renormalized.
    pub fn from_wxyz(q: [f64; 4], translation: Vec3) -> Self {
        let q = Quaternion::new(q[0], q[1], q[2], q[3]);
        Self::new(UnitQuaternion::from_quaternion(q), translation)
    }

    /// Quaternion components `(w, x, y, z)`.
    pub fn wxyz(&self) -> [f64; 4] {
        let q = self.rotation.quaternion();
        [q.w, q.i, q.j, q.k]
    }

    pub fn rotation(&self) -> &UnitQuaternion<f64> {
        &self.rotation
    }

    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        self.rotation.to_rotation_matrix().into_inner()
    }

    pub fn translation(&self) -> &Vec3 {
        &self.translation
    }

    pub fn transform_point(&self, p: &Vec3) -> Vec3 {
        self.rotation * p + self.translation
    }

    pub fn transform_vector(&self, v: &Vec3) -> Vec3 {
        self.rotation * v
    }

    pub fn inverse(&self) -> Self {
        let rotation = self.rotation.inverse();
        Self {
            rotation,
            translation: -(rotation * self.translation),
        }
    }

    /// `self * other`: applies `other` first, then `self`.
    pub fn compose(&self, other: &Self) -> Self {
        Self {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    /// Applies a local increment: the rotation is pre-multiplied by
    /// `exp(rotation_increment)` and the translation shifted by
    /// `translation_increment`.
    pub fn perturbed(&self, rotation_increment: &Vec3, translation_increment: &Vec3) -> Self {
        Self {
            rotation: UnitQuaternion::from_scaled_axis(*rotation_increment) * self.rotation,
            translation: self.translation + translation_increment,
        }
    }

    /// Angle (radians) of the relative rotation between `self` and `other`.
    pub fn rotation_angle_to(&self, other: &Self) -> f64 {
        self.rotation.angle_to(&other.rotation)
    }
}

impl std::ops::Mul for RigidTransform {
    type Output = RigidTransform;
    fn mul(self, rhs: RigidTransform) -> RigidTransform {
        self.compose(&rhs)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn transform_strategy() -> impl Strategy<Value = RigidTransform> {
        (
            prop::array::uniform3(-3.0f64..3.0),
            prop::array::uniform3(-2.0f64..2.0),
        )
            .prop_map(|(rv, t)| {
                RigidTransform::from_rotation_vector(&Vec3::from(rv), Vec3::from(t))
            })
    }

    proptest! {
        #[test]
        fn round_trip_recovers_point(
            t in transform_strategy(),
            x in prop::array::uniform3(-5.0f64..5.0),
        ) {
            let x = Vec3::from(x);
            let back = t.inverse().transform_point(&t.transform_point(&x));
            prop_assert!((back - x).norm() < 1e-10);
            let q = t.wxyz();
            let n = (q.iter().map(|c| c * c).sum::<f64>()).sqrt();
            prop_assert!((n - 1.0).abs() < 1e-12);
        }

        #[test]
        fn composition_is_associative(
            a in transform_strategy(),
            b in transform_strategy(),
            c in transform_strategy(),
            x in prop::array::uniform3(-5.0f64..5.0),
        ) {
            let x = Vec3::from(x);
            let l = ((a * b) * c).transform_point(&x);
            let r = (a * (b * c)).transform_point(&x);
            prop_assert!((l - r).norm() < 1e-10);
        }
    }

    #[test]
    fn wxyz_round_trip() {
        let t = RigidTransform::from_axis_angle(&Vec3::new(1.0, 2.0, 3.0), 0.3, Vec3::x());
        let u = RigidTransform::from_wxyz(t.wxyz(), *t.translation());
        assert_relative_eq!(u.rotation_angle_to(&t), 0.0, epsilon = 1e-12);
    }
}
