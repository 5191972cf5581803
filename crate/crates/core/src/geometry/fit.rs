use nalgebra::{DMatrix, DVector, Matrix3, SymmetricEigen, UnitQuaternion, Rotation3};

use super::{transform_plane, Plane, RigidTransform, Vec3};
use crate::error::{Error, Result};

/// Total-least-squares plane through `points`, optionally weighted.
///
/// The normal is the eigenvector of the smallest eigenvalue of the weighted
/// scatter matrix about the weighted centroid.
pub fn fit_plane(points: &[Vec3], weights: Option<&[f64]>) -> Result<Plane> {
    if points.len() < 3 {
        return Err(Error::NotEnoughData {
            what: "points for a plane fit",
            needed: 3,
            got: points.len(),
        });
    }
    if let Some(w) = weights {
        if w.len() != points.len() {
            return Err(Error::DimensionMismatch {
                expected: format!("{} weights", points.len()),
                got: format!("{} weights", w.len()),
            });
        }
        if w.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::InvalidInput("plane-fit weights must be finite and non-negative".into()));
        }
    }
    let weight = |i: usize| weights.map_or(1.0, |w| w[i]);

    let mut total = 0.0;
    let mut centroid = Vec3::zeros();
    for (i, p) in points.iter().enumerate() {
        total += weight(i);
        centroid += p * weight(i);
    }
    if !(total > 0.0) {
        return Err(Error::Degenerate("plane-fit weights sum to zero".into()));
    }
    centroid /= total;

    let mut scatter = Matrix3::zeros();
    for (i, p) in points.iter().enumerate() {
        let d = p - centroid;
        scatter += d * d.transpose() * weight(i);
    }
    let eig = SymmetricEigen::new(scatter);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let largest = eig.eigenvalues[order[2]];
    let middle = eig.eigenvalues[order[1]];
    if !(largest > 0.0) || middle <= largest * 1e-14 {
        return Err(Error::Degenerate("points are collinear or coincident".into()));
    }
    let normal: Vec3 = eig.eigenvectors.column(order[0]).into();
    Plane::new(normal, normal.dot(&centroid))
}

/// Rigid transform `t` such that `transform_plane(t, planes_a[i]) ~ planes_b[i]`.
///
/// The rotation aligns the normals (orthogonal Procrustes with determinant
/// correction); the translation solves `n_b . t = d_b - d_a` in the least
/// squares sense.
pub fn estimate_transform_from_planes(planes_a: &[Plane], planes_b: &[Plane]) -> Result<RigidTransform> {
    if planes_a.len() != planes_b.len() {
        return Err(Error::DimensionMismatch {
            expected: format!("{} planes", planes_a.len()),
            got: format!("{} planes", planes_b.len()),
        });
    }
    let n = planes_a.len();
    if n < 3 {
        return Err(Error::NotEnoughData {
            what: "plane pairs",
            needed: 3,
            got: n,
        });
    }
    let normals_a = DMatrix::from_fn(n, 3, |i, j| planes_a[i].normal()[j]);
    let span = normals_a.singular_values();
    let smallest = span.iter().cloned().fold(f64::INFINITY, f64::min);
    if smallest <= 1e-6 {
        return Err(Error::Degenerate(format!(
            "plane normals do not span 3D (smallest singular value {smallest:e})"
        )));
    }

    let mut corr = Matrix3::zeros();
    for (a, b) in planes_a.iter().zip(planes_b) {
        corr += b.normal() * a.normal().transpose();
    }
    let svd = corr.svd(true, true);
    let (u, v_t) = (svd.u.unwrap(), svd.v_t.unwrap());
    let det = (u * v_t).determinant();
    let fix = Matrix3::from_diagonal(&Vec3::new(1.0, 1.0, det.signum()));
    let rot = Rotation3::from_matrix_unchecked(u * fix * v_t);
    let rotation = UnitQuaternion::from_rotation_matrix(&rot);
    let rotate_only = RigidTransform::new(rotation, Vec3::zeros());

    let lhs = DMatrix::from_fn(n, 3, |i, j| planes_b[i].normal()[j]);
    let rhs = DVector::from_fn(n, |i, _| {
        let rotated = transform_plane(&rotate_only, &planes_a[i]);
        // Canonicalization may have flipped the rotated plane; compare offsets
        // along the target normal.
        let sign = rotated.normal().dot(planes_b[i].normal()).signum();
        planes_b[i].offset() - sign * rotated.offset()
    });
    let t = lhs
        .svd(true, true)
        .solve(&rhs, 1e-12)
        .map_err(|e| Error::Degenerate(format!("translation solve failed: {e}")))?;
    Ok(RigidTransform::new(rotation, Vec3::new(t[0], t[1], t[2])))
}
