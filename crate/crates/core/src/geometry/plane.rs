use super::{RigidTransform, Vec3};
use crate::error::{Error, Result};

/// Plane `normal . x - offset = 0` with a unit normal and `offset >= 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Plane {
    normal: Vec3,
    offset: f64,
}

impl Plane {
    /// Builds a canonical plane. The normal is rescaled to unit length (the
    /// offset with it) and the sign is flipped if needed so that `offset >= 0`.
    /// A normal that is already unit to rounding is kept bit for bit.
    pub fn new(normal: Vec3, offset: f64) -> Result<Self> {
        let norm = normal.norm();
        if !(norm.is_finite() && norm > 0.0) || !offset.is_finite() {
            return Err(Error::InvalidInput(format!(
                "plane normal must be finite and non-zero, got {normal:?}"
            )));
        }
        if (norm - 1.0).abs() <= 4.0 * f64::EPSILON {
            return Ok(Self::canonical(normal, offset));
        }
        Ok(Self::canonical(normal / norm, offset / norm))
    }

    /// Plane through `point` with the given normal.
    pub fn from_point_normal(point: &Vec3, normal: &Vec3) -> Result<Self> {
        let n = normal.normalize();
        Self::new(n, n.dot(point))
    }

    fn canonical(normal: Vec3, offset: f64) -> Self {
        if offset < 0.0 {
            Self {
                normal: -normal,
                offset: -offset,
            }
        } else {
            Self { normal, offset }
        }
    }

    pub fn normal(&self) -> &Vec3 {
        &self.normal
    }

    pub fn offset(&self) -> f64 {
        self.offset
    }

    /// Signed distance `n . p - d`.
    pub fn signed_distance(&self, p: &Vec3) -> f64 {
        self.normal.dot(p) - self.offset
    }
}

/// Projects `p` along its line of sight (the ray from the origin) onto `plane`.
pub fn los_project(p: &Vec3, plane: &Plane) -> Result<Vec3> {
    let denom = plane.normal.dot(p);
    if denom.abs() < 1e-12 {
        return Err(Error::ParallelRay);
    }
    Ok(p * (plane.offset / denom))
}

/// Orthogonal projection of `p` onto `plane`.
pub fn orth_project(p: &Vec3, plane: &Plane) -> Vec3 {
    p - plane.normal * plane.signed_distance(p)
}

/// Expresses `plane` in the target frame of `t`: for every `x` on `plane`,
/// `t * x` lies on the returned plane.
pub fn transform_plane(t: &RigidTransform, plane: &Plane) -> Plane {
    let normal = t.rotation() * plane.normal;
    let offset = plane.offset + normal.dot(t.translation());
    Plane::canonical(normal, offset)
}
