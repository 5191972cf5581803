use crate::error::{Error, Result};
use crate::geometry::{fit_plane, IndexSet, OrganizedCloud, Plane, Vec3};

fn inlier_points(cloud: &OrganizedCloud, inliers: &IndexSet) -> Vec<Vec3> {
    inliers.iter().filter_map(|&(u, v)| cloud.get(u, v).copied()).collect()
}

/// RMS distance of the inlier points to their own best-fit plane.
pub fn planarity_error(cloud: &OrganizedCloud, inliers: &IndexSet) -> Result<f64> {
    let pts = inlier_points(cloud, inliers);
    if pts.len() < 3 {
        return Err(Error::NotEnoughData {
            what: "planarity inliers",
            needed: 3,
            got: pts.len(),
        });
    }
    let plane = fit_plane(&pts, None)?;
    Ok((pts.iter().map(|p| plane.signed_distance(p).powi(2)).sum::<f64>() / pts.len() as f64).sqrt())
}

/// Mean signed distance of the inlier points to a reference plane (positive
/// means farther from the sensor than the plane).
pub fn global_error(cloud: &OrganizedCloud, inliers: &IndexSet, plane: &Plane) -> Result<f64> {
    let pts = inlier_points(cloud, inliers);
    if pts.is_empty() {
        return Err(Error::NotEnoughData {
            what: "global-error inliers",
            needed: 1,
            got: 0,
        });
    }
    Ok(pts.iter().map(|p| plane.signed_distance(p)).sum::<f64>() / pts.len() as f64)
}

/// `acos(n . a) - 90 deg`, in degrees. Zero when the plane normal is
/// perpendicular to the axis.
pub fn rotation_error(normal: &Vec3, axis: &Vec3) -> Result<f64> {
    for (name, v) in [("normal", normal), ("axis", axis)] {
        if (v.norm() - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidInput(format!("{name} is not a unit vector (norm {})", v.norm())));
        }
    }
    Ok((normal.dot(axis).clamp(-1.0, 1.0).acos() - std::f64::consts::FRAC_PI_2).to_degrees())
}

/// Mean inlier depth minus the true wall distance.
pub fn depth_vs_ground_truth(cloud: &OrganizedCloud, inliers: &IndexSet, true_distance: f64) -> Result<f64> {
    let pts = inlier_points(cloud, inliers);
    if pts.is_empty() {
        return Err(Error::NotEnoughData {
            what: "depth inliers",
            needed: 1,
            got: 0,
        });
    }
    Ok(pts.iter().map(|p| p.z).sum::<f64>() / pts.len() as f64 - true_distance)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn grid_cloud(f: impl Fn(usize, usize) -> Vec3) -> (OrganizedCloud, IndexSet) {
        let (w, h) = (10, 8);
        let pts = (0..w * h).map(|i| Some(f(i % w, i / w))).collect();
        let idx: Vec<_> = (0..h).flat_map(|v| (0..w).map(move |u| (u, v))).collect();
        (
            OrganizedCloud::new(w, h, pts).unwrap(),
            IndexSet::new(idx, w, h).unwrap(),
        )
    }

    #[test]
    fn planarity_examples() {
        let (c, i) = grid_cloud(|u, v| Vec3::new(u as f64 * 0.1, v as f64 * 0.1, 2.0 + 0.01 * u as f64));
        assert!(planarity_error(&c, &i).unwrap() < 1e-12);
        // Checkerboard offsets of +-1 cm about z = 2.
        let (c, i) = grid_cloud(|u, v| {
            let s = if (u + v) % 2 == 0 { 0.01 } else { -0.01 };
            Vec3::new(u as f64 * 0.1, v as f64 * 0.1, 2.0 + s)
        });
        assert_relative_eq!(planarity_error(&c, &i).unwrap(), 0.01, epsilon = 1e-9);
    }

    #[test]
    fn global_error_examples() {
        let plane = Plane::new(Vec3::new(0.0, 0.0, 1.0), 2.0).unwrap();
        let (c, i) = grid_cloud(|u, v| Vec3::new(u as f64 * 0.1, v as f64 * 0.1, 2.0));
        assert!(global_error(&c, &i, &plane).unwrap().abs() < 1e-15);
        let (c, i) = grid_cloud(|u, v| Vec3::new(u as f64 * 0.1, v as f64 * 0.1, 2.02));
        assert_relative_eq!(global_error(&c, &i, &plane).unwrap(), 0.02, epsilon = 1e-12);
        let empty = IndexSet::new(vec![], 10, 8).unwrap();
        assert!(global_error(&c, &empty, &plane).is_err());
    }

    #[test]
    fn rotation_error_examples() {
        let x = Vec3::x();
        assert_relative_eq!(rotation_error(&Vec3::z(), &x).unwrap(), 0.0, epsilon = 1e-12);
        assert_relative_eq!(rotation_error(&x, &x).unwrap(), -90.0, epsilon = 1e-12);
        // A normal tilted by 2 degrees towards +x has n.a = sin(2 deg), so the
        // formula gives -2 degrees; tilting away from +x gives +2.
        let a = 2f64.to_radians();
        let toward = Vec3::new(a.sin(), 0.0, a.cos());
        let away = Vec3::new(-a.sin(), 0.0, a.cos());
        assert_relative_eq!(rotation_error(&toward, &x).unwrap(), -2.0, epsilon = 1e-9);
        assert_relative_eq!(rotation_error(&away, &x).unwrap(), 2.0, epsilon = 1e-9);
        assert!(rotation_error(&Vec3::new(0.0, 0.0, 2.0), &x).is_err());
    }

    #[test]
    fn depth_vs_truth_examples() {
        let (c, i) = grid_cloud(|u, v| Vec3::new(u as f64 * 0.1, v as f64 * 0.1, 3.05));
        assert_relative_eq!(depth_vs_ground_truth(&c, &i, 3.0).unwrap(), 0.05, epsilon = 1e-12);
    }
}
