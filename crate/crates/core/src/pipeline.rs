//! End-to-end flows shared by the command-line tool and the tests:
//! calibration from a set of frames, evaluation on test frames, and the
//! correction latency benchmark.

use std::time::Instant;

use log::{info, warn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::calib::{
    estimate_undistortion_map, init_global, refine, select_wall_points, BoardSpec, Frame, GlobalConfig, GlobalFrame,
    RefinementReport, RefinementState, UndistortConfig, UndistortionEstimate,
};
use crate::error::{Error, Result};
use crate::geometry::{
    depth_to_cloud, fit_plane, solve_pnp, transform_plane, CameraIntrinsics, DepthImage, IndexSet, NoiseModel,
    OrganizedCloud, Plane, RigidTransform, Vec3,
};
use crate::io::{fmt_f64, Calibration, Dataset};
use crate::maps::{apply_undistortion_cloud, apply_undistortion_image, Corrector};
use crate::synth::{depth_vs_ground_truth, global_error, planarity_error, rotation_error};

/// Environment variable capping worker threads of `correct` and `bench`.
pub const THREADS_ENV: &str = "DEPTHCAL_THREADS";

/// Worker thread count: `requested` (or every available core), capped by
/// `DEPTHCAL_THREADS` when set.
pub fn worker_threads(requested: Option<usize>) -> Result<usize> {
    let available = std::thread::available_parallelism().map_or(1, |n| n.get());
    let mut n = requested.unwrap_or(available).max(1);
    if let Ok(cap) = std::env::var(THREADS_ENV) {
        let cap: usize = cap
            .trim()
            .parse()
            .map_err(|_| Error::InvalidInput(format!("{THREADS_ENV} must be a positive integer, got `{cap}`")))?;
        if cap == 0 {
            return Err(Error::InvalidInput(format!("{THREADS_ENV} must be at least 1")));
        }
        n = n.min(cap);
    }
    Ok(n)
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct CalibrateConfig {
    pub undistort: UndistortConfig,
    pub global: GlobalConfig,
}

/// Result of a full calibration together with the intermediate products.
#[derive(Debug, Clone)]
pub struct CalibrationRun {
    pub calibration: Calibration,
    pub undistortion: UndistortionEstimate,
    pub initial: RefinementState,
    pub refinement: RefinementReport,
    /// Planarity (RMS, meters) over the training wall inliers, per used
    /// frame: before and after undistortion.
    pub training_planarity: Vec<(usize, f64, f64)>,
}

impl CalibrationRun {
    /// Per-stage summary as `stage,metric,value` rows.
    pub fn report_rows(&self) -> Vec<Vec<String>> {
        let mut rows = Vec::new();
        let mut push = |stage: &str, metric: &str, value: String| rows.push(vec![stage.into(), metric.into(), value]);
        let und = &self.undistortion;
        push("undistortion", "frames_used", und.used_frames().to_string());
        push("undistortion", "samples", und.samples.total().to_string());
        let n = self.training_planarity.len().max(1) as f64;
        let before = self.training_planarity.iter().map(|r| r.1).sum::<f64>() / n;
        let after = self.training_planarity.iter().map(|r| r.2).sum::<f64>() / n;
        push("undistortion", "mean_planarity_before_m", fmt_f64(before));
        push("undistortion", "mean_planarity_after_m", fmt_f64(after));
        let lm = &self.refinement.lm;
        push("refinement", "frames_used", self.refinement.state.poses.len().to_string());
        push("refinement", "initial_cost", fmt_f64(lm.initial_cost));
        push("refinement", "final_cost", fmt_f64(lm.final_cost));
        push("refinement", "iterations", lm.iterations.to_string());
        push("refinement", "termination", format!("{:?}", lm.termination));
        push("refinement", "dependent_corner_violation", fmt_f64(self.refinement.max_invariant_violation));
        let t = self.calibration.extrinsic.translation();
        let init_t = self.initial.extrinsic.translation();
        push("extrinsic", "translation_change_from_init_m", fmt_f64((t - init_t).norm()));
        push(
            "extrinsic",
            "rotation_change_from_init_deg",
            fmt_f64(self.calibration.extrinsic.rotation_angle_to(&self.initial.extrinsic).to_degrees()),
        );
        rows
    }
}

/// Runs both stages on training frames: the undistortion map from wall
/// views, then the global map, extrinsic and depth intrinsics.
pub fn calibrate(
    frames: &[Frame],
    intr_rgb: &CameraIntrinsics,
    intr_depth: &CameraIntrinsics,
    extrinsic_guess: &RigidTransform,
    board: &BoardSpec,
    cfg: &CalibrateConfig,
) -> Result<CalibrationRun> {
    cfg.undistort.validate()?;
    cfg.global.validate()?;
    let t = Instant::now();
    let undistortion = estimate_undistortion_map(frames, extrinsic_guess, intr_rgb, intr_depth, board, &cfg.undistort)?;
    info!(
        "undistortion map from {} of {} frames in {:.2?}",
        undistortion.used_frames(),
        frames.len(),
        t.elapsed()
    );

    let mut gframes = Vec::new();
    let mut training_planarity = Vec::new();
    for (k, f) in frames.iter().enumerate() {
        let Some(inliers) = undistortion.inliers[k].clone() else {
            continue;
        };
        let original = depth_to_cloud(&f.depth, intr_depth)?;
        let corrected = apply_undistortion_cloud(&undistortion.map, &original)?;
        if let (Ok(a), Ok(b)) = (planarity_error(&original, &inliers), planarity_error(&corrected, &inliers)) {
            training_planarity.push((f.id, a, b));
        }
        gframes.push(GlobalFrame {
            undistorted: apply_undistortion_image(&undistortion.map, &f.depth)?,
            inliers,
            corners: f.corners.clone(),
        });
    }

    let t = Instant::now();
    let init = init_global(&gframes, intr_rgb, intr_depth, board, &cfg.global)?;
    let used: Vec<GlobalFrame> = init.used.iter().map(|&k| gframes[k].clone()).collect();
    let refinement = refine(&init.state, &used, intr_rgb, board, &cfg.global)?;
    info!(
        "refinement over {} frames: cost {:.4e} -> {:.4e} in {} iterations ({:.2?})",
        used.len(),
        refinement.lm.initial_cost,
        refinement.lm.final_cost,
        refinement.lm.iterations,
        t.elapsed()
    );
    let s = &refinement.state;
    let calibration = Calibration {
        intr_depth: s.intr_depth,
        intr_rgb: *intr_rgb,
        extrinsic: s.extrinsic,
        undistortion: undistortion.map.clone(),
        global: s.global.clone(),
    };
    Ok(CalibrationRun {
        calibration,
        undistortion,
        initial: init.state,
        refinement,
        training_planarity,
    })
}

/// Calibrates from the training frames (frames without a true distance) of
/// a dataset.
pub fn calibrate_dataset(ds: &Dataset, cfg: &CalibrateConfig) -> Result<CalibrationRun> {
    let frames: Vec<Frame> = ds.train().map(|f| f.frame.clone()).collect();
    let m = &ds.manifest;
    let mut cfg = cfg.clone();
    cfg.global.sigma_c = if m.sigma_c > 0.0 { m.sigma_c } else { cfg.global.sigma_c };
    calibrate(&frames, &m.intr_rgb, &m.intr_depth, &m.extrinsic_guess, &m.board, &cfg)
}

/// Metrics of one evaluated frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameEvaluation {
    pub id: usize,
    pub true_distance: f64,
    /// Expected noise at the true distance.
    pub sigma: f64,
    pub inliers: usize,
    /// Planarity RMS of the raw, undistorted and fully corrected clouds.
    pub planarity_raw: f64,
    pub planarity_undistorted: f64,
    pub planarity_corrected: f64,
    /// Mean signed distance to the checkerboard plane seen by the RGB camera,
    /// before and after the global map.
    pub global_undistorted: f64,
    pub global_corrected: f64,
    /// Tilt of the corrected wall about the depth x and y axes (degrees).
    pub rotation_x_deg: f64,
    pub rotation_y_deg: f64,
    /// Mean depth minus the true distance, raw and corrected.
    pub depth_error_raw: f64,
    pub depth_error_corrected: f64,
}

/// Evaluates `calib` on the test frames of a dataset. Wall points are
/// selected on the corrected cloud, seeded by the checkerboard.
pub fn evaluate(calib: &Calibration, ds: &Dataset, noise: &NoiseModel, cfg: &UndistortConfig) -> Result<Vec<FrameEvaluation>> {
    let m = &ds.manifest;
    let corrector = Corrector::new(calib.undistortion.clone(), calib.global.clone(), calib.intr_depth, 1)?;
    let mut out = Vec::new();
    for f in ds.test() {
        let true_distance = f.entry.true_distance.expect("test frame");
        match evaluate_frame(calib, &corrector, &f.frame, true_distance, &m.board, noise, cfg) {
            Ok(e) => out.push(e),
            Err(e) => warn!("frame {} skipped: {e}", f.entry.id),
        }
    }
    if out.is_empty() {
        return Err(Error::NotEnoughData {
            what: "evaluable test frames",
            needed: 1,
            got: 0,
        });
    }
    Ok(out)
}

fn evaluate_frame(
    calib: &Calibration,
    corrector: &Corrector,
    frame: &Frame,
    true_distance: f64,
    board: &BoardSpec,
    noise: &NoiseModel,
    cfg: &UndistortConfig,
) -> Result<FrameEvaluation> {
    let raw = depth_to_cloud(&frame.depth, &calib.intr_depth)?;
    let undistorted = apply_undistortion_cloud(&calib.undistortion, &raw)?;
    let corrected = corrector.correct_cloud(&frame.depth)?;
    let inliers = select_wall_points(&corrected, &frame.corners, &calib.extrinsic, &calib.intr_rgb, board, cfg)?;
    let board_plane = board_plane_in_depth(calib, frame, board)?;
    let wall = fit_plane(&inlier_points(&corrected, &inliers), None)?;
    // Normal pointing away from the sensor.
    let n = if wall.normal().z < 0.0 { -wall.normal() } else { *wall.normal() };
    Ok(FrameEvaluation {
        id: frame.id,
        true_distance,
        sigma: noise.sigma(true_distance),
        inliers: inliers.len(),
        planarity_raw: planarity_error(&raw, &inliers)?,
        planarity_undistorted: planarity_error(&undistorted, &inliers)?,
        planarity_corrected: planarity_error(&corrected, &inliers)?,
        global_undistorted: global_error(&undistorted, &inliers, &board_plane)?,
        global_corrected: global_error(&corrected, &inliers, &board_plane)?,
        rotation_x_deg: rotation_error(&n, &Vec3::x())?,
        rotation_y_deg: rotation_error(&n, &Vec3::y())?,
        depth_error_raw: depth_vs_ground_truth(&raw, &inliers, true_distance)?,
        depth_error_corrected: depth_vs_ground_truth(&corrected, &inliers, true_distance)?,
    })
}

fn inlier_points(cloud: &OrganizedCloud, inliers: &IndexSet) -> Vec<Vec3> {
    inliers.iter().filter_map(|&(u, v)| cloud.get(u, v).copied()).collect()
}

/// Checkerboard plane from the corners, expressed in the depth frame.
fn board_plane_in_depth(calib: &Calibration, frame: &Frame, board: &BoardSpec) -> Result<Plane> {
    let pose = solve_pnp(&board.points(), frame.corners.pixels(), &calib.intr_rgb)?.pose;
    let in_camera = Plane::from_point_normal(pose.translation(), &pose.transform_vector(&Vec3::z()))?;
    Ok(transform_plane(&calib.extrinsic, &in_camera))
}

/// Evaluation tables as `(file name, header, rows)`.
pub fn evaluation_tables(evals: &[FrameEvaluation]) -> Vec<(&'static str, Vec<&'static str>, Vec<Vec<String>>)> {
    let f = fmt_f64;
    let rows = |g: &dyn Fn(&FrameEvaluation) -> Vec<String>| -> Vec<Vec<String>> {
        evals
            .iter()
            .map(|e| {
                let mut r = vec![e.id.to_string(), f(e.true_distance)];
                r.extend(g(e));
                r
            })
            .collect()
    };
    vec![
        (
            "planarity.csv",
            vec!["frame", "distance_m", "sigma_m", "inliers", "raw_m", "undistorted_m", "corrected_m"],
            rows(&|e| {
                vec![
                    f(e.sigma),
                    e.inliers.to_string(),
                    f(e.planarity_raw),
                    f(e.planarity_undistorted),
                    f(e.planarity_corrected),
                ]
            }),
        ),
        (
            "global.csv",
            vec!["frame", "distance_m", "undistorted_m", "corrected_m"],
            rows(&|e| vec![f(e.global_undistorted), f(e.global_corrected)]),
        ),
        (
            "rotation.csv",
            vec!["frame", "distance_m", "about_x_deg", "about_y_deg"],
            rows(&|e| vec![f(e.rotation_x_deg), f(e.rotation_y_deg)]),
        ),
        (
            "depth_vs_gt.csv",
            vec!["frame", "distance_m", "raw_m", "corrected_m"],
            rows(&|e| vec![f(e.depth_error_raw), f(e.depth_error_corrected)]),
        ),
    ]
}

/// Correction latency statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchReport {
    pub threads: usize,
    pub frames: usize,
    pub width: usize,
    pub height: usize,
    pub mean_ms: f64,
    pub p99_ms: f64,
    pub max_ms: f64,
    /// Sum of every corrected coordinate; equal across thread counts when
    /// the output is numerically identical.
    pub checksum: f64,
}

/// Synthetic input for the benchmark: a tilted plane with small
/// deterministic jitter and a sprinkling of invalid pixels.
pub fn bench_frame(width: usize, height: usize, seed: u64) -> Result<DepthImage> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..width * height)
        .map(|i| {
            let (u, v) = ((i % width) as f64, (i / width) as f64);
            if rng.random_bool(0.02) {
                0.0
            } else {
                2.0 + 0.5 * u / width as f64 + 0.3 * v / height as f64 + rng.random_range(-0.005..0.005)
            }
        })
        .collect();
    DepthImage::new(width, height, data)
}

/// Times `frames` full corrections (both maps and cloud generation) of a
/// frame sized like the calibration.
pub fn bench(calib: &Calibration, frames: usize, threads: usize) -> Result<BenchReport> {
    if frames == 0 {
        return Err(Error::InvalidInput("bench needs at least one frame".into()));
    }
    let corrector = Corrector::new(calib.undistortion.clone(), calib.global.clone(), calib.intr_depth, threads)?;
    let (w, h) = (calib.intr_depth.width, calib.intr_depth.height);
    let inputs: Vec<DepthImage> = (0..frames.min(8)).map(|k| bench_frame(w, h, k as u64)).collect::<Result<_>>()?;
    // One untimed run warms caches and the worker pool.
    corrector.correct_cloud(&inputs[0])?;
    let mut times = Vec::with_capacity(frames);
    let mut checksum = 0.0;
    for k in 0..frames {
        let t = Instant::now();
        let cloud = corrector.correct_cloud(&inputs[k % inputs.len()])?;
        times.push(t.elapsed().as_secs_f64() * 1e3);
        if k < inputs.len() {
            checksum += cloud.points().iter().flatten().map(|p| p.x + p.y + p.z).sum::<f64>();
        }
    }
    let mean_ms = times.iter().sum::<f64>() / frames as f64;
    times.sort_by(f64::total_cmp);
    let p99_ms = times[((frames as f64 * 0.99).ceil() as usize).clamp(1, frames) - 1];
    Ok(BenchReport {
        threads: corrector.threads(),
        frames,
        width: w,
        height: h,
        mean_ms,
        p99_ms,
        max_ms: *times.last().expect("non-empty"),
        checksum,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bench_is_thread_count_independent() {
        let intr = CameraIntrinsics::pinhole(60.0, 60.0, 31.5, 23.5, 64, 48).unwrap();
        let calib = Calibration::identity(intr, intr, (4, 4), 2).unwrap();
        let one = bench(&calib, 5, 1).unwrap();
        let two = bench(&calib, 5, 2).unwrap();
        assert_eq!(one.checksum, two.checksum);
        assert_eq!((one.threads, two.threads), (1, 2));
        assert!(one.mean_ms > 0.0 && one.max_ms >= one.p99_ms);
        assert!(bench(&calib, 0, 1).is_err());
    }

    #[test]
    fn bench_frame_is_deterministic() {
        assert_eq!(bench_frame(16, 8, 3).unwrap(), bench_frame(16, 8, 3).unwrap());
        assert_ne!(bench_frame(16, 8, 3).unwrap(), bench_frame(16, 8, 4).unwrap());
    }
}
