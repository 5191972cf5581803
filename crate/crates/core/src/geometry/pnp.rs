use nalgebra::{DMatrix, Matrix3, Rotation3, SymmetricEigen, UnitQuaternion};

use super::lm::{lm_minimize, LeastSquaresProblem, LmOptions};
use super::{fit_plane, CameraIntrinsics, RigidTransform, Vec2, Vec3};
use crate::error::{Error, Result};

/// RMS reprojection error (pixels) above which an unconverged PnP is an error.
const PNP_RMS_LIMIT: f64 = 1.0;

#[derive(Debug, Clone, Copy)]
pub struct PnpSolution {
    /// Maps board (object) coordinates into the camera frame.
    pub pose: RigidTransform,
    /// RMS reprojection error in pixels.
    pub rms: f64,
    pub iterations: usize,
}

/// Pose of a planar target from 2D-3D correspondences.
///
/// Initialized by decomposing the plane-to-image homography, then refined by
/// Levenberg-Marquardt on the reprojection error.
pub fn solve_pnp(board_points: &[Vec3], image_points: &[Vec2], intr: &CameraIntrinsics) -> Result<PnpSolution> {
    if board_points.len() != image_points.len() {
        return Err(Error::DimensionMismatch {
            expected: format!("{} image points", board_points.len()),
            got: format!("{} image points", image_points.len()),
        });
    }
    if board_points.len() < 4 {
        return Err(Error::NotEnoughData {
            what: "PnP correspondences",
            needed: 4,
            got: board_points.len(),
        });
    }
    let init = homography_pose(board_points, image_points, intr)?;
    let mut problem = ReprojectionProblem {
        reference: init,
        board_points,
        image_points,
        intr,
    };
    let opts = LmOptions {
        max_iter: 100,
        ..Default::default()
    };
    let report = lm_minimize(&mut problem, &[0.0; 6], &opts)?;
    let pose = problem.pose_at(&report.x);
    let rms = (report.final_cost / board_points.len() as f64).sqrt();
    if !report.converged && rms > PNP_RMS_LIMIT {
        return Err(Error::NoConvergence {
            iterations: report.iterations,
            cost: report.final_cost,
        });
    }
    Ok(PnpSolution {
        pose,
        rms,
        iterations: report.iterations,
    })
}

struct ReprojectionProblem<'a> {
    reference: RigidTransform,
    board_points: &'a [Vec3],
    image_points: &'a [Vec2],
    intr: &'a CameraIntrinsics,
}

impl ReprojectionProblem<'_> {
    fn pose_at(&self, x: &[f64]) -> RigidTransform {
        self.reference
            .perturbed(&Vec3::new(x[0], x[1], x[2]), &Vec3::new(x[3], x[4], x[5]))
    }
}

impl LeastSquaresProblem for ReprojectionProblem<'_> {
    fn residuals(&self, x: &[f64]) -> Vec<f64> {
        let pose = self.pose_at(x);
        let mut r = Vec::with_capacity(2 * self.board_points.len());
        for (bp, ip) in self.board_points.iter().zip(self.image_points) {
            match self.intr.project_point(&pose.transform_point(bp)) {
                Ok(px) => {
                    r.push(px.x - ip.x);
                    r.push(px.y - ip.y);
                }
                Err(_) => {
                    r.push(f64::NAN);
                    r.push(f64::NAN);
                }
            }
        }
        r
    }

    fn accept(&mut self, x: &mut [f64]) -> bool {
        self.reference = self.pose_at(x);
        x.iter_mut().for_each(|v| *v = 0.0);
        true
    }
}

/// Similarity normalizing a 2D point set to zero mean and mean norm sqrt(2).
fn normalizing_transform(pts: &[Vec2]) -> Matrix3<f64> {
    let n = pts.len() as f64;
    let mean = pts.iter().fold(Vec2::zeros(), |a, p| a + p) / n;
    let spread = pts.iter().map(|p| (p - mean).norm()).sum::<f64>() / n;
    let s = if spread > 0.0 { 2f64.sqrt() / spread } else { 1.0 };
    Matrix3::new(s, 0.0, -s * mean.x, 0.0, s, -s * mean.y, 0.0, 0.0, 1.0)
}

fn homography_pose(board_points: &[Vec3], image_points: &[Vec2], intr: &CameraIntrinsics) -> Result<RigidTransform> {
    // Express the (planar) board in a local 2D frame.
    let plane = fit_plane(board_points, None)?;
    let normal = *plane.normal();
    let centroid = board_points.iter().fold(Vec3::zeros(), |a, p| a + p) / board_points.len() as f64;
    let seed = if normal.x.abs() < 0.9 { Vec3::x() } else { Vec3::y() };
    let e1 = (seed - normal * normal.dot(&seed)).normalize();
    let e2 = normal.cross(&e1);
    let local: Vec<Vec2> = board_points
        .iter()
        .map(|p| Vec2::new((p - centroid).dot(&e1), (p - centroid).dot(&e2)))
        .collect();
    if let Some(p) = board_points.iter().find(|p| plane.signed_distance(p).abs() > 1e-6) {
        return Err(Error::InvalidInput(format!("board point {p:?} is not coplanar with the others")));
    }
    let normalized: Vec<Vec2> = image_points.iter().map(|p| intr.pixel_to_normalized(p)).collect();

    let t_src = normalizing_transform(&local);
    let t_dst = normalizing_transform(&normalized);
    let n = local.len();
    let mut a = DMatrix::zeros(2 * n, 9);
    for i in 0..n {
        let s = t_src * local[i].push(1.0);
        let d = t_dst * normalized[i].push(1.0);
        let (x, y) = (s.x / s.z, s.y / s.z);
        let (u, v) = (d.x / d.z, d.y / d.z);
        a.row_mut(2 * i)
            .copy_from_slice(&[-x, -y, -1.0, 0.0, 0.0, 0.0, u * x, u * y, u]);
        a.row_mut(2 * i + 1)
            .copy_from_slice(&[0.0, 0.0, 0.0, -x, -y, -1.0, v * x, v * y, v]);
    }
    let ata = a.transpose() * &a;
    let eig = SymmetricEigen::new(ata);
    let imin = eig.eigenvalues.imin();
    let h = eig.eigenvectors.column(imin);
    let hn = Matrix3::new(h[0], h[1], h[2], h[3], h[4], h[5], h[6], h[7], h[8]);
    let t_dst_inv = t_dst
        .try_inverse()
        .ok_or_else(|| Error::Degenerate("image points are coincident".into()))?;
    let hmat = t_dst_inv * hn * t_src;

    let (h1, h2, h3) = (hmat.column(0).into_owned(), hmat.column(1).into_owned(), hmat.column(2).into_owned());
    let scale_norm = 0.5 * (h1.norm() + h2.norm());
    if !(scale_norm > 1e-12) {
        return Err(Error::Degenerate("homography is singular".into()));
    }
    let mut lambda = 1.0 / scale_norm;
    if h3.z * lambda < 0.0 {
        lambda = -lambda;
    }
    let r1: Vec3 = h1 * lambda;
    let r2: Vec3 = h2 * lambda;
    let t: Vec3 = h3 * lambda;
    let approx = Matrix3::from_columns(&[r1, r2, r1.cross(&r2)]);
    let svd = approx.svd(true, true);
    let (u, v_t) = (svd.u.unwrap(), svd.v_t.unwrap());
    let fix = Matrix3::from_diagonal(&Vec3::new(1.0, 1.0, (u * v_t).determinant().signum()));
    let rot = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(u * fix * v_t));
    let local_to_camera = RigidTransform::new(rot, t);

    let basis = Matrix3::from_columns(&[e1, e2, normal]);
    let local_to_board = RigidTransform::new(
        UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(basis)),
        centroid,
    );
    Ok(local_to_camera.compose(&local_to_board.inverse()))
}
