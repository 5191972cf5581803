use log::{debug, warn};
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use super::{BoardSpec, CornerGrid};
use crate::error::{Error, Result};
use crate::geometry::lm::{fd_step, lm_minimize, LeastSquaresProblem, LmOptions, LmReport};
use crate::geometry::{
    depth_to_cloud, estimate_transform_from_planes, fit_plane, solve_pnp, CameraIntrinsics,
    DepthImage, IndexSet, NoiseModel, OrganizedCloud, Plane, RigidTransform, Vec2, Vec3,
};
use crate::maps::GlobalMap;

#[derive(Debug, Clone, PartialEq)]
pub struct GlobalConfig {
    /// Corner detection noise (pixels).
    pub sigma_c: f64,
    /// Depth noise after undistortion.
    pub noise: NoiseModel,
    pub lm: LmOptions,
    pub degree: usize,
    /// Only inliers on every `pos_stride`-th row and column enter the plane
    /// residuals.
    pub pos_stride: usize,
    pub freeze_global: bool,
    pub freeze_intrinsics: bool,
    /// Worker threads for residual and Jacobian evaluation (`<= 1`: none).
    pub threads: usize,
}

impl Default for GlobalConfig {
    fn default() -> Self {
        Self {
            sigma_c: 0.2,
            noise: NoiseModel::default(),
            lm: LmOptions {
                max_iter: 100,
                ..LmOptions::default()
            },
            degree: 2,
            pos_stride: 4,
            freeze_global: false,
            freeze_intrinsics: false,
            threads: 1,
        }
    }
}

impl GlobalConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_c > 0.0) {
            return Err(Error::InvalidInput(format!("sigma_c must be positive, got {}", self.sigma_c)));
        }
        if self.degree == 0 || self.degree > crate::maps::MAX_DEGREE || self.pos_stride == 0 {
            return Err(Error::InvalidInput("invalid global map degree or stride".into()));
        }
        Ok(())
    }
}

/// Stage-two input for one view.
#[derive(Debug, Clone, PartialEq)]
pub struct GlobalFrame {
    /// Depth after the undistortion map; held fixed during refinement.
    pub undistorted: DepthImage,
    pub inliers: IndexSet,
    pub corners: CornerGrid,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RefinementState {
    /// Camera-to-depth transform (`x_D = T x_C`).
    pub extrinsic: RigidTransform,
    /// Board-to-camera pose per frame.
    pub poses: Vec<RigidTransform>,
    /// Depth intrinsics; only the pinhole terms are refined.
    pub intr_depth: CameraIntrinsics,
    pub global: GlobalMap,
}

impl RefinementState {
    /// Length of the parameter vector: extrinsic (6), depth intrinsics (4),
    /// global map (3 corners x degree), board poses (6 each).
    pub fn n_params(&self) -> usize {
        10 + 3 * self.global.degree() + 6 * self.poses.len()
    }
}

#[derive(Debug, Clone)]
pub struct GlobalInit {
    pub state: RefinementState,
    /// Indices of the input frames that were used, aligned with `state.poses`.
    pub used: Vec<usize>,
    /// Board planes in the camera frame and wall planes in the depth frame.
    pub camera_planes: Vec<Plane>,
    pub depth_planes: Vec<Plane>,
}

/// Initial global map, extrinsic and board poses.
///
/// The extrinsic aligns checkerboard planes (camera frame) with wall planes
/// (depth frame). The board planes, mapped into the depth frame, then serve
/// as references for fitting the three free corners of the global map. The
/// fourth corner follows from the others.
pub fn init_global(
    frames: &[GlobalFrame],
    intr_rgb: &CameraIntrinsics,
    intr_depth: &CameraIntrinsics,
    board: &BoardSpec,
    cfg: &GlobalConfig,
) -> Result<GlobalInit> {
    cfg.validate()?;
    let object = board.points();
    let mut used = Vec::new();
    let mut poses = Vec::new();
    let mut camera_planes = Vec::new();
    let mut depth_planes = Vec::new();
    let mut clouds = Vec::new();
    for (k, f) in frames.iter().enumerate() {
        let step = (|| -> Result<_> {
            let pose = solve_pnp(&object, f.corners.pixels(), intr_rgb)?.pose;
            let corners_c: Vec<Vec3> = object.iter().map(|b| pose.transform_point(b)).collect();
            let pc = fit_plane(&corners_c, None)?;
            let cloud = depth_to_cloud(&f.undistorted, intr_depth)?;
            let pts: Vec<Vec3> = f.inliers.iter().filter_map(|&(u, v)| cloud.get(u, v).copied()).collect();
            let pd = fit_plane(&pts, None)?;
            Ok((pose, pc, pd, cloud))
        })();
        match step {
            Ok((pose, pc, pd, cloud)) => {
                used.push(k);
                poses.push(pose);
                camera_planes.push(pc);
                depth_planes.push(pd);
                clouds.push(cloud);
            }
            Err(e) => warn!("frame {k}: not usable for the global map ({e})"),
        }
    }
    if used.len() < 3 {
        return Err(Error::Degenerate(format!(
            "at least 3 views with non-parallel walls are needed, got {}",
            used.len()
        )));
    }
    let aligned = estimate_transform_from_planes(&camera_planes, &depth_planes)?;
    let (w, h) = (intr_depth.width, intr_depth.height);
    let inlier_sets: Vec<&IndexSet> = used.iter().map(|&k| &frames[k].inliers).collect();
    let (translation, global) =
        joint_translation_and_global(aligned.rotation(), &camera_planes, &clouds, &inlier_sets, w, h, cfg)?;
    let extrinsic = RigidTransform::new(*aligned.rotation(), translation);
    debug!("initial global map {:?}", global.free_params());
    Ok(GlobalInit {
        state: RefinementState {
            extrinsic,
            poses,
            intr_depth: *intr_depth,
            global,
        },
        used,
        camera_planes,
        depth_planes,
    })
}

/// Per-corner sample of one frame for the joint initialization: weighted
/// mean depth `z` and weighted mean of `1 / (n . ray)`, so that the mean
/// line-of-sight depth to a plane with offset `d` is `d * kappa`.
struct CornerSample {
    z: f64,
    kappa: f64,
}

fn corner_samples(cloud: &OrganizedCloud, inliers: &IndexSet, normal: &Vec3) -> [Option<CornerSample>; 4] {
    let (w, h) = (cloud.width() as f64, cloud.height() as f64);
    let mut acc = [(0.0, 0.0, 0.0); 4];
    for &(u, v) in inliers.iter() {
        let Some(p) = cloud.get(u, v) else { continue };
        let cos = normal.dot(&(p / p.z));
        if !(cos > 1e-9) {
            continue;
        }
        for (a, wt) in acc.iter_mut().zip(GlobalMap::corner_weights(u as f64 / w, v as f64 / h)) {
            a.0 += wt;
            a.1 += wt * p.z;
            a.2 += wt / cos;
        }
    }
    acc.map(|(wt, wz, wk)| (wt > 0.0).then(|| CornerSample { z: wz / wt, kappa: wk / wt }))
}

/// Joint weighted linear least squares for the extrinsic translation and the
/// free global-map corners, given the extrinsic rotation.
///
/// A board plane `(n, a)` in the camera frame becomes `(R n, a + R n . t)` in
/// the depth frame, so each corner sample asks `g_c(z) = (a + R n . t) kappa`,
/// linear in `t` and in the corner coefficients (the fourth corner being
/// `g_W0 + g_0H - g_00`). Solving both together keeps a global depth bias
/// from leaking into the translation.
fn joint_translation_and_global(
    rotation: &nalgebra::UnitQuaternion<f64>,
    camera_planes: &[Plane],
    clouds: &[OrganizedCloud],
    inliers: &[&IndexSet],
    width: usize,
    height: usize,
    cfg: &GlobalConfig,
) -> Result<(Vec3, GlobalMap)> {
    let deg = cfg.degree;
    let unknowns = 3 + 3 * deg;
    let mut rows: Vec<(Vec<f64>, f64)> = Vec::new();
    for ((pc, cloud), inl) in camera_planes.iter().zip(clouds).zip(inliers) {
        let n = rotation * pc.normal();
        for (c, sample) in corner_samples(cloud, inl, &n).into_iter().enumerate() {
            let Some(CornerSample { z, kappa }) = sample else { continue };
            let wt = 1.0 / cfg.noise.sigma(z);
            let mut row = vec![0.0; unknowns];
            for (k, nk) in n.iter().enumerate() {
                row[k] = -kappa * nk * wt;
            }
            // Corner c in map order 00, W0, 0H, WH.
            let signs: [f64; 3] = match c {
                0 => [1.0, 0.0, 0.0],
                1 => [0.0, 1.0, 0.0],
                2 => [0.0, 0.0, 1.0],
                _ => [-1.0, 1.0, 1.0],
            };
            for (f, sign) in signs.iter().enumerate() {
                for k in 1..=deg {
                    row[3 + f * deg + k - 1] = sign * z.powi(k as i32) * wt;
                }
            }
            rows.push((row, pc.offset() * kappa * wt));
        }
    }
    if rows.len() < unknowns {
        return Err(Error::NotEnoughData {
            what: "corner samples for the global map",
            needed: unknowns,
            got: rows.len(),
        });
    }
    // Depth powers are rescaled for conditioning.
    let scale = rows.len() as f64;
    let zmax = clouds
        .iter()
        .flat_map(|c| c.iter_valid().map(|(_, _, p)| p.z))
        .fold(1.0f64, f64::max);
    let mut a = DMatrix::zeros(rows.len(), unknowns);
    let mut b = DVector::zeros(rows.len());
    for (i, (row, rhs)) in rows.iter().enumerate() {
        for (j, val) in row.iter().enumerate() {
            let s = if j < 3 { 1.0 } else { zmax.powi(((j - 3) % deg + 1) as i32) };
            a[(i, j)] = val / s;
        }
        b[i] = *rhs;
    }
    let svd = a.svd(true, true);
    let max_sv = svd.singular_values.max();
    if !(svd.singular_values.min() > 1e-10 * max_sv) {
        return Err(Error::Degenerate("board planes do not constrain translation and global map".into()));
    }
    let x = svd
        .solve(&b, 1e-14 * max_sv)
        .map_err(|e| Error::Degenerate(format!("joint initialization failed: {e}")))?;
    debug!("joint initialization over {} samples ({scale} rows)", rows.len());
    let mut free = vec![0.0; 3 * deg];
    for (j, f) in free.iter_mut().enumerate() {
        *f = x[3 + j] / zmax.powi((j % deg + 1) as i32);
    }
    let global = GlobalMap::from_free_params(width, height, deg, &free)?;
    Ok((Vec3::new(x[0], x[1], x[2]), global))
}

/// Reprojection residuals of frame `k`, two per corner, divided by `sigma_c`.
pub fn residual_repr(
    state: &RefinementState,
    k: usize,
    corners: &CornerGrid,
    intr_rgb: &CameraIntrinsics,
    board: &BoardSpec,
    sigma_c: f64,
) -> Result<Vec<f64>> {
    let pose = state
        .poses
        .get(k)
        .ok_or_else(|| Error::InvalidInput(format!("no pose for frame {k}")))?;
    let mut out = Vec::with_capacity(2 * board.len());
    for (b, m) in board.points().iter().zip(corners.pixels()) {
        let px = intr_rgb.project_point(&pose.transform_point(b))?;
        out.push((px.x - m.x) / sigma_c);
        out.push((px.y - m.y) / sigma_c);
    }
    Ok(out)
}

fn board_plane_in_depth(extrinsic: &RigidTransform, pose: &RigidTransform, object: &[Vec3]) -> Result<Plane> {
    let pts: Vec<Vec3> = object
        .iter()
        .map(|b| extrinsic.transform_point(&pose.transform_point(b)))
        .collect();
    fit_plane(&pts, None)
}

/// Plane residuals of frame `k`: signed distance of each globally corrected
/// inlier point to the checkerboard plane in the depth frame, divided by
/// `sqrt(|inliers|) * sigma_U(z)`.
pub fn residual_pos(
    state: &RefinementState,
    k: usize,
    undistorted: &DepthImage,
    inliers: &IndexSet,
    board: &BoardSpec,
    noise: &NoiseModel,
) -> Result<Vec<f64>> {
    let pose = state
        .poses
        .get(k)
        .ok_or_else(|| Error::InvalidInput(format!("no pose for frame {k}")))?;
    let samples = pos_samples(undistorted, inliers, noise, 1)?;
    let plane = board_plane_in_depth(&state.extrinsic, pose, &board.points())?;
    let i = &state.intr_depth;
    Ok(samples
        .iter()
        .map(|s| pos_residual(s, &plane, &state.global, i.fx, i.fy, i.cx, i.cy))
        .collect())
}

#[derive(Debug, Clone, Copy)]
struct PosSample {
    u: f64,
    v: f64,
    z: f64,
    weight: f64,
}

fn pos_samples(depth: &DepthImage, inliers: &IndexSet, noise: &NoiseModel, stride: usize) -> Result<Vec<PosSample>> {
    let picked: Vec<(usize, usize, f64)> = inliers
        .iter()
        .filter(|&&(u, v)| u % stride == 0 && v % stride == 0)
        .filter(|&&(u, v)| u < depth.width() && v < depth.height())
        .map(|&(u, v)| (u, v, depth.get(u, v)))
        .filter(|s| s.2 > 0.0)
        .collect();
    if picked.is_empty() {
        return Err(Error::NotEnoughData {
            what: "plane residual inliers",
            needed: 1,
            got: 0,
        });
    }
    let root_n = (picked.len() as f64).sqrt();
    Ok(picked
        .into_iter()
        .map(|(u, v, z)| PosSample {
            u: u as f64,
            v: v as f64,
            z,
            weight: 1.0 / (root_n * noise.sigma(z)),
        })
        .collect())
}

#[inline]
fn pos_residual(s: &PosSample, plane: &Plane, g: &GlobalMap, fx: f64, fy: f64, cx: f64, cy: f64) -> f64 {
    let scale = g.eval(s.u, s.v, s.z);
    let p = Vec3::new((s.u - cx) / fx, (s.v - cy) / fy, 1.0) * scale;
    plane.signed_distance(&p) * s.weight
}

/// Parameters shared by all frames.
#[derive(Debug, Clone)]
struct Shared {
    extrinsic: RigidTransform,
    fx: f64,
    fy: f64,
    cx: f64,
    cy: f64,
    global: GlobalMap,
}

struct PreparedFrame {
    corners: Vec<Vec2>,
    samples: Vec<PosSample>,
}

/// Joint refinement of extrinsic, depth intrinsics, global map and board
/// poses as a least-squares problem.
///
/// Parameter layout: extrinsic increment `[omega, dt]` (6), `fx fy cx cy`
/// (4), free global coefficients, then one `[omega, dt]` increment per board
/// pose. Increments are folded into the reference poses after each accepted
/// step. The Jacobian is block sparse: a pose only affects its own frame.
pub struct RefinementProblem {
    reference_extrinsic: RigidTransform,
    reference_poses: Vec<RigidTransform>,
    template: CameraIntrinsics,
    width: usize,
    height: usize,
    degree: usize,
    frames: Vec<PreparedFrame>,
    object: Vec<Vec3>,
    intr_rgb: CameraIntrinsics,
    sigma_c: f64,
    frozen: Vec<bool>,
    pool: Option<rayon::ThreadPool>,
    /// Largest dependent-corner violation seen after an accepted step.
    pub max_invariant_violation: f64,
    pub accepted_steps: usize,
}

struct FrameJacobian {
    /// Plane rows x shared columns.
    shared: DMatrix<f64>,
    /// All rows of the frame x its 6 pose columns.
    pose: DMatrix<f64>,
}

impl RefinementProblem {
    pub fn new(
        state: &RefinementState,
        frames: &[GlobalFrame],
        intr_rgb: &CameraIntrinsics,
        board: &BoardSpec,
        cfg: &GlobalConfig,
    ) -> Result<Self> {
        cfg.validate()?;
        if frames.len() != state.poses.len() {
            return Err(Error::DimensionMismatch {
                expected: format!("{} frames (one per pose)", state.poses.len()),
                got: format!("{} frames", frames.len()),
            });
        }
        if state.global.degree() != cfg.degree {
            return Err(Error::InvalidInput(format!(
                "global map degree {} differs from configured degree {}",
                state.global.degree(),
                cfg.degree
            )));
        }
        let prepared = frames
            .iter()
            .map(|f| {
                if (f.corners.rows(), f.corners.cols()) != (board.rows(), board.cols()) {
                    return Err(Error::DimensionMismatch {
                        expected: format!("{}x{} corners", board.rows(), board.cols()),
                        got: format!("{}x{}", f.corners.rows(), f.corners.cols()),
                    });
                }
                Ok(PreparedFrame {
                    corners: f.corners.pixels().to_vec(),
                    samples: pos_samples(&f.undistorted, &f.inliers, &cfg.noise, cfg.pos_stride)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let n_shared = 10 + 3 * cfg.degree;
        let mut frozen = vec![false; n_shared + 6 * frames.len()];
        if cfg.freeze_intrinsics {
            frozen[6..10].iter_mut().for_each(|f| *f = true);
        }
        if cfg.freeze_global {
            frozen[10..n_shared].iter_mut().for_each(|f| *f = true);
        }
        let pool = if cfg.threads > 1 {
            Some(
                rayon::ThreadPoolBuilder::new()
                    .num_threads(cfg.threads)
                    .build()
                    .map_err(|e| Error::InvalidInput(format!("cannot start worker pool: {e}")))?,
            )
        } else {
            None
        };
        Ok(Self {
            reference_extrinsic: state.extrinsic,
            reference_poses: state.poses.clone(),
            template: state.intr_depth,
            width: state.global.width(),
            height: state.global.height(),
            degree: cfg.degree,
            frames: prepared,
            object: board.points(),
            intr_rgb: *intr_rgb,
            sigma_c: cfg.sigma_c,
            frozen,
            pool,
            max_invariant_violation: 0.0,
            accepted_steps: 0,
        })
    }

    fn n_shared(&self) -> usize {
        10 + 3 * self.degree
    }

    pub fn n_params(&self) -> usize {
        self.n_shared() + 6 * self.frames.len()
    }

    /// Parameter vector representing `state` relative to the current
    /// reference poses (zero increments).
    pub fn initial_params(&self, state: &RefinementState) -> Vec<f64> {
        let mut x = vec![0.0; self.n_params()];
        let i = &state.intr_depth;
        x[6..10].copy_from_slice(&[i.fx, i.fy, i.cx, i.cy]);
        x[10..self.n_shared()].copy_from_slice(&state.global.free_params());
        x
    }

    fn shared_at(&self, x: &[f64]) -> Option<Shared> {
        let global = GlobalMap::from_free_params(self.width, self.height, self.degree, &x[10..self.n_shared()]).ok()?;
        Some(Shared {
            extrinsic: self
                .reference_extrinsic
                .perturbed(&Vec3::new(x[0], x[1], x[2]), &Vec3::new(x[3], x[4], x[5])),
            fx: x[6],
            fy: x[7],
            cx: x[8],
            cy: x[9],
            global,
        })
    }

    fn pose_at(&self, x: &[f64], k: usize) -> RigidTransform {
        let o = self.n_shared() + 6 * k;
        self.reference_poses[k].perturbed(
            &Vec3::new(x[o], x[o + 1], x[o + 2]),
            &Vec3::new(x[o + 3], x[o + 4], x[o + 5]),
        )
    }

    /// State represented by `x`.
    pub fn state_at(&self, x: &[f64]) -> Result<RefinementState> {
        let s = self
            .shared_at(x)
            .ok_or_else(|| Error::InvalidInput("invalid global map parameters".into()))?;
        let mut intr = self.template;
        (intr.fx, intr.fy, intr.cx, intr.cy) = (s.fx, s.fy, s.cx, s.cy);
        Ok(RefinementState {
            extrinsic: s.extrinsic,
            poses: (0..self.frames.len()).map(|k| self.pose_at(x, k)).collect(),
            intr_depth: intr,
            global: s.global,
        })
    }

    fn repr_rows(&self, k: usize, pose: &RigidTransform, out: &mut Vec<f64>) {
        for (b, m) in self.object.iter().zip(&self.frames[k].corners) {
            match self.intr_rgb.project_point(&pose.transform_point(b)) {
                Ok(px) => {
                    out.push((px.x - m.x) / self.sigma_c);
                    out.push((px.y - m.y) / self.sigma_c);
                }
                Err(_) => {
                    out.push(f64::NAN);
                    out.push(f64::NAN);
                }
            }
        }
    }

    fn pos_rows(&self, k: usize, s: &Shared, pose: &RigidTransform, out: &mut Vec<f64>) {
        let samples = &self.frames[k].samples;
        match board_plane_in_depth(&s.extrinsic, pose, &self.object) {
            Ok(plane) => out.extend(
                samples
                    .iter()
                    .map(|p| pos_residual(p, &plane, &s.global, s.fx, s.fy, s.cx, s.cy)),
            ),
            Err(_) => out.extend(std::iter::repeat_n(f64::NAN, samples.len())),
        }
    }

    fn frame_rows(&self, k: usize, s: &Shared, pose: &RigidTransform) -> Vec<f64> {
        let mut out = Vec::with_capacity(2 * self.object.len() + self.frames[k].samples.len());
        self.repr_rows(k, pose, &mut out);
        self.pos_rows(k, s, pose, &mut out);
        out
    }

    fn n_repr(&self) -> usize {
        2 * self.object.len()
    }

    fn row_offsets(&self) -> Vec<usize> {
        let mut offs = Vec::with_capacity(self.frames.len() + 1);
        let mut o = 0;
        offs.push(0);
        for f in &self.frames {
            o += self.n_repr() + f.samples.len();
            offs.push(o);
        }
        offs
    }

    fn par_frames<T: Send>(&self, f: impl Fn(usize) -> T + Sync + Send) -> Vec<T> {
        let n = self.frames.len();
        match &self.pool {
            Some(pool) => pool.install(|| (0..n).into_par_iter().map(&f).collect()),
            None => (0..n).map(f).collect(),
        }
    }

    /// Shared parameters with each shared coordinate perturbed in turn.
    fn perturbed_shared(&self, x: &[f64]) -> Vec<(f64, Option<Shared>)> {
        (0..self.n_shared())
            .map(|j| {
                let mut xp = x.to_vec();
                let h = fd_step(x[j]);
                xp[j] += h;
                (h, self.shared_at(&xp))
            })
            .collect()
    }

    fn frame_jacobian(
        &self,
        x: &[f64],
        k: usize,
        base: &Shared,
        perturbed: &[(f64, Option<Shared>)],
        r: &[f64],
    ) -> FrameJacobian {
        let nr = self.n_repr();
        let np = self.frames[k].samples.len();
        let pose = self.pose_at(x, k);
        let mut shared = DMatrix::zeros(np, self.n_shared());
        let mut buf = Vec::with_capacity(np);
        for (j, (h, s)) in perturbed.iter().enumerate() {
            if self.frozen[j] {
                continue;
            }
            buf.clear();
            match s {
                Some(s) => self.pos_rows(k, s, &pose, &mut buf),
                None => buf.extend(std::iter::repeat_n(f64::NAN, np)),
            }
            for i in 0..np {
                shared[(i, j)] = (buf[i] - r[nr + i]) / h;
            }
        }
        let mut jp = DMatrix::zeros(nr + np, 6);
        let o = self.n_shared() + 6 * k;
        let mut xp = x.to_vec();
        for c in 0..6 {
            let h = fd_step(x[o + c]);
            xp[o + c] = x[o + c] + h;
            let rows = self.frame_rows(k, base, &self.pose_at(&xp, k));
            xp[o + c] = x[o + c];
            for i in 0..nr + np {
                jp[(i, c)] = (rows[i] - r[i]) / h;
            }
        }
        FrameJacobian { shared, pose: jp }
    }

    fn jacobians(&self, x: &[f64], r: &[f64]) -> Option<Vec<FrameJacobian>> {
        let base = self.shared_at(x)?;
        let perturbed = self.perturbed_shared(x);
        let offs = self.row_offsets();
        Some(self.par_frames(|k| self.frame_jacobian(x, k, &base, &perturbed, &r[offs[k]..offs[k + 1]])))
    }

    /// `J d` at `x` (with `r = residuals(x)`), from the same finite-difference
    /// blocks used to build the normal equations.
    pub fn jacobian_vector_product(&self, x: &[f64], r: &[f64], d: &[f64]) -> Vec<f64> {
        let Some(jacs) = self.jacobians(x, r) else {
            return vec![f64::NAN; r.len()];
        };
        let ns = self.n_shared();
        let nr = self.n_repr();
        let ds = DVector::from_column_slice(&d[..ns]);
        let mut out = Vec::with_capacity(r.len());
        for (k, jac) in jacs.iter().enumerate() {
            let dp = DVector::from_column_slice(&d[ns + 6 * k..ns + 6 * k + 6]);
            let from_pose = &jac.pose * dp;
            let from_shared = &jac.shared * &ds;
            for i in 0..from_pose.len() {
                out.push(from_pose[i] + if i >= nr { from_shared[i - nr] } else { 0.0 });
            }
        }
        out
    }
}

impl LeastSquaresProblem for RefinementProblem {
    fn residuals(&self, x: &[f64]) -> Vec<f64> {
        let Some(shared) = self.shared_at(x) else {
            return vec![f64::NAN; self.row_offsets()[self.frames.len()]];
        };
        self.par_frames(|k| self.frame_rows(k, &shared, &self.pose_at(x, k)))
            .concat()
    }

    fn normal_equations(&self, x: &[f64], r: &[f64]) -> (DMatrix<f64>, DVector<f64>) {
        let n = self.n_params();
        let ns = self.n_shared();
        let nr = self.n_repr();
        let mut jtj = DMatrix::zeros(n, n);
        let mut jtr = DVector::zeros(n);
        let Some(jacs) = self.jacobians(x, r) else {
            jtj.fill_diagonal(1.0);
            jtr.fill(f64::NAN);
            return (jtj, jtr);
        };
        let offs = self.row_offsets();
        for (k, jac) in jacs.iter().enumerate() {
            let rk = DVector::from_column_slice(&r[offs[k]..offs[k + 1]]);
            let r_pos = rk.rows(nr, rk.len() - nr);
            let o = ns + 6 * k;
            let pos_rows = jac.pose.rows(nr, jac.pose.nrows() - nr);
            let gg = jac.shared.tr_mul(&jac.shared);
            let gp = jac.shared.tr_mul(&pos_rows);
            let pp = jac.pose.tr_mul(&jac.pose);
            let mut block = jtj.view_mut((0, 0), (ns, ns));
            block += gg;
            jtj.view_mut((0, o), (ns, 6)).copy_from(&gp);
            jtj.view_mut((o, 0), (6, ns)).copy_from(&gp.transpose());
            jtj.view_mut((o, o), (6, 6)).copy_from(&pp);
            let mut top = jtr.rows_mut(0, ns);
            top += jac.shared.tr_mul(&r_pos);
            jtr.rows_mut(o, 6).copy_from(&jac.pose.tr_mul(&rk));
        }
        for j in 0..n {
            if self.frozen[j] {
                jtj.row_mut(j).fill(0.0);
                jtj.column_mut(j).fill(0.0);
                jtj[(j, j)] = 1.0;
                jtr[j] = 0.0;
            }
        }
        (jtj, jtr)
    }

    fn accept(&mut self, x: &mut [f64]) -> bool {
        self.accepted_steps += 1;
        if let Some(s) = self.shared_at(x) {
            let [g00, gw0, g0h, gwh] = s.global.corners();
            let violation = (0..=self.degree)
                .map(|i| (gwh.coeffs()[i] - (gw0.coeffs()[i] + g0h.coeffs()[i] - g00.coeffs()[i])).abs())
                .fold(0.0, f64::max);
            self.max_invariant_violation = self.max_invariant_violation.max(violation);
            self.reference_extrinsic = s.extrinsic;
        }
        for k in 0..self.frames.len() {
            self.reference_poses[k] = self.pose_at(x, k);
        }
        x[..6].fill(0.0);
        let ns = self.n_shared();
        x[ns..].fill(0.0);
        true
    }
}

#[derive(Debug, Clone)]
pub struct RefinementReport {
    pub state: RefinementState,
    pub lm: LmReport,
    /// Largest dependent-corner coefficient violation over accepted steps.
    pub max_invariant_violation: f64,
}

/// Jointly refines the global map, extrinsic, board poses and depth
/// intrinsics, starting from `state0`.
pub fn refine(
    state0: &RefinementState,
    frames: &[GlobalFrame],
    intr_rgb: &CameraIntrinsics,
    board: &BoardSpec,
    cfg: &GlobalConfig,
) -> Result<RefinementReport> {
    let mut problem = RefinementProblem::new(state0, frames, intr_rgb, board, cfg)?;
    let x0 = problem.initial_params(state0);
    let report = lm_minimize(&mut problem, &x0, &cfg.lm)?;
    debug!(
        "refinement: cost {:.6e} -> {:.6e} in {} iterations ({:?})",
        report.initial_cost, report.final_cost, report.iterations, report.termination
    );
    if !report.converged {
        warn!(
            "refinement stopped after {} iterations without meeting its tolerances (cost {:.6e})",
            report.iterations, report.final_cost
        );
    }
    let state = problem.state_at(&report.x)?;
    Ok(RefinementReport {
        state,
        max_invariant_violation: problem.max_invariant_violation,
        lm: report,
    })
}
