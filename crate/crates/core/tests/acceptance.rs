//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any
//! criterion fails. Runs without the libtest harness so the lines are always
//! printed.

use std::path::Path;
use std::process::ExitCode;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use depthcal::calib::{estimate_undistortion_map, Frame, GlobalFrame, RefinementProblem, UndistortConfig};
use depthcal::geometry::{
    depth_to_cloud, fit_plane, CameraIntrinsics, DepthImage, LeastSquaresProblem, OrganizedCloud, Plane, Vec3,
};
use depthcal::io::{decode_depth_pgm, encode_depth_pgm, Calibration};
use depthcal::maps::{apply_global_cloud, apply_undistortion_cloud, apply_undistortion_image, Corrector, GlobalMap, PolyFn, UndistortionMap};
use depthcal::pipeline::{bench, calibrate, CalibrateConfig, CalibrationRun};
use depthcal::synth::{
    depth_vs_ground_truth, planarity_error, render_all, rotation_error, FrameRole, LabeledFrame, SceneParams, SceneSpec,
};

struct Outcome {
    failed: Vec<usize>,
}

impl Outcome {
    fn report(&mut self, n: usize, name: &str, pass: bool, detail: String) {
        println!("criterion {n} ({name}): {} | {detail}", if pass { "PASS" } else { "FAIL" });
        if !pass {
            self.failed.push(n);
        }
    }
}

struct Rendered {
    scene: SceneSpec,
    frames: Vec<LabeledFrame>,
}

impl Rendered {
    fn new(p: SceneParams) -> Self {
        let scene = SceneSpec::build(&p).expect("scene");
        let frames = render_all(&scene).expect("render");
        Self { scene, frames }
    }

    fn train(&self) -> Vec<Frame> {
        self.frames.iter().filter(|f| f.role == FrameRole::Train).map(|f| f.frame.clone()).collect()
    }

    fn test(&self) -> impl Iterator<Item = &LabeledFrame> {
        self.frames.iter().filter(|f| f.role == FrameRole::Test)
    }

    fn stage_one(&self, degree: usize) -> UndistortionMap {
        let s = &self.scene;
        let cfg = UndistortConfig {
            degree,
            ..UndistortConfig::default()
        };
        estimate_undistortion_map(&self.train(), &s.extrinsic_guess, &s.intr_rgb, &s.intr_depth, &s.board, &cfg)
            .expect("stage one")
            .map
    }

    fn calibrate(&self) -> CalibrationRun {
        let s = &self.scene;
        calibrate(
            &self.train(),
            &s.intr_rgb,
            &s.intr_depth,
            &s.extrinsic_guess,
            &s.board,
            &CalibrateConfig::default(),
        )
        .expect("calibration")
    }

    /// Planarity over the true wall pixels of every test frame, raw and
    /// after `map`: `(distance, raw, undistorted)`.
    fn planarity(&self, map: &UndistortionMap) -> Vec<(f64, f64, f64)> {
        self.test()
            .map(|f| {
                let wall = f.wall_pixels();
                let raw = depth_to_cloud(&f.frame.depth, &self.scene.intr_depth).unwrap();
                let und = apply_undistortion_cloud(map, &raw).unwrap();
                (f.distance, planarity_error(&raw, &wall).unwrap(), planarity_error(&und, &wall).unwrap())
            })
            .collect()
    }

    fn corrected(&self, c: &Calibration, f: &LabeledFrame) -> OrganizedCloud {
        Corrector::new(c.undistortion.clone(), c.global.clone(), c.intr_depth, 1)
            .unwrap()
            .correct_cloud(&f.frame.depth)
            .unwrap()
    }

    fn depth_errors(&self, c: &Calibration) -> Vec<(f64, f64)> {
        self.test()
            .map(|f| (f.distance, depth_vs_ground_truth(&self.corrected(c, f), &f.wall_pixels(), f.distance).unwrap()))
            .collect()
    }

    /// Largest tilt of the corrected test walls about the depth x and y axes.
    fn worst_rotation(&self, c: &Calibration) -> f64 {
        self.test()
            .map(|f| {
                let cloud = self.corrected(c, f);
                let pts: Vec<Vec3> = f.wall_pixels().iter().filter_map(|&(u, v)| cloud.get(u, v).copied()).collect();
                let n = *fit_plane(&pts, None).unwrap().normal();
                let n = if n.z < 0.0 { -n } else { n };
                let rx = rotation_error(&n, &Vec3::x()).unwrap().abs();
                let ry = rotation_error(&n, &Vec3::y()).unwrap().abs();
                rx.max(ry)
            })
            .fold(0.0, f64::max)
    }
}

fn wall_only(noise: bool) -> SceneParams {
    SceneParams {
        noise,
        bias: (1.0, 0.0),
        train_range: (1.0, 4.0),
        test_range: (1.0, 4.0),
        n_test: 7,
        ..SceneParams::default()
    }
}

fn fmt_curve(xs: &[(f64, f64)]) -> String {
    xs.iter().map(|(d, e)| format!("{d:.1}m:{:.3}mm", e * 1e3)).collect::<Vec<_>>().join(" ")
}

fn criterion_1(out: &mut Outcome, clean: &Rendered, noisy: &Rendered, clean_map: &UndistortionMap) {
    let p = clean.planarity(clean_map);
    let worst = p.iter().map(|r| r.2).fold(0.0, f64::max);
    let noiseless_ok = worst < 1e-4;

    let t = Instant::now();
    let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let noisy_map = pool.install(|| noisy.stage_one(2));
    let elapsed = t.elapsed().as_secs_f64();
    let nm = &noisy.scene.noise_model;
    let q = noisy.planarity(&noisy_map);
    let corrected_ok = q.iter().all(|&(d, _, after)| after <= 1.5 * nm.sigma(d));
    let uncorrected_ok = q.iter().filter(|r| r.0 >= 3.0 - 1e-9).all(|&(d, before, _)| before > 3.0 * nm.sigma(d));
    let ratio = |i: usize| {
        q.iter()
            .map(|r| format!("{:.1}m:{:.2}", r.0, [r.1, r.2][i] / nm.sigma(r.0)))
            .collect::<Vec<_>>()
            .join(" ")
    };
    out.report(
        1,
        "undistortion round trip",
        noiseless_ok && corrected_ok && uncorrected_ok && elapsed < 120.0,
        format!(
            "noiseless after [{}] (< 0.100mm: {noiseless_ok}); noisy after/sigma [{}] (<= 1.5: {corrected_ok}); \
             noisy before/sigma [{}] (> 3 at 3m+: {uncorrected_ok}); single-thread stage one {elapsed:.1}s",
            fmt_curve(&p.iter().map(|r| (r.0, r.2)).collect::<Vec<_>>()),
            ratio(1),
            ratio(0),
        ),
    );
}

fn criterion_2(out: &mut Outcome, clean: &Rendered, deg2: &UndistortionMap) {
    let at4 = |m: &UndistortionMap| {
        clean
            .planarity(m)
            .into_iter()
            .find(|r| (r.0 - 4.0).abs() < 1e-9)
            .expect("test frame at 4 m")
            .2
    };
    let (e1, e2, e3) = (at4(&clean.stage_one(1)), at4(deg2), at4(&clean.stage_one(3)));
    let pass = e1 >= 4.0 * e2 && (e3 - e2).abs() <= 0.2 * e2;
    out.report(
        2,
        "degree study",
        pass,
        format!(
            "planarity at 4 m: degree 1 {:.3}mm, degree 2 {:.3}mm, degree 3 {:.3}mm (ratio 1/2 = {:.1})",
            e1 * 1e3,
            e2 * 1e3,
            e3 * 1e3,
            e1 / e2
        ),
    );
}

fn criterion_3(out: &mut Outcome, clean: (&Rendered, &CalibrationRun), noisy: (&Rendered, &CalibrationRun)) {
    let ec = clean.0.depth_errors(&clean.1.calibration);
    let en = noisy.0.depth_errors(&noisy.1.calibration);
    let ok_c = ec.iter().all(|e| e.1.abs() <= 1e-3);
    let ok_n = en.iter().all(|e| e.1.abs() <= 0.02);
    out.report(
        3,
        "global correction",
        ok_c && ok_n,
        format!("noiseless [{}] (<= 1mm: {ok_c}); noisy [{}] (<= 20mm: {ok_n})", fmt_curve(&ec), fmt_curve(&en)),
    );
}

fn criterion_4(out: &mut Outcome, clean: (&Rendered, &CalibrationRun), noisy: (&Rendered, &CalibrationRun)) {
    let err = |r: (&Rendered, &CalibrationRun)| {
        let e = &r.1.calibration.extrinsic;
        let t = &r.0.scene.extrinsic;
        ((e.translation() - t.translation()).norm(), e.rotation_angle_to(t).to_degrees())
    };
    let (tc, rc) = err(clean);
    let (tn, rn) = err(noisy);
    let ok_c = tc <= 5e-4 && rc <= 0.05;
    let ok_n = tn <= 5e-3 && rn <= 0.5;
    out.report(
        4,
        "extrinsic recovery",
        ok_c && ok_n,
        format!(
            "noiseless {:.3}mm / {rc:.4}deg (<= 0.5mm, 0.05deg: {ok_c}); noisy {:.3}mm / {rn:.4}deg (<= 5mm, 0.5deg: {ok_n})",
            tc * 1e3,
            tn * 1e3
        ),
    );
}

fn criterion_5(out: &mut Outcome, clean: (&Rendered, &CalibrationRun), noisy: (&Rendered, &CalibrationRun)) {
    let rc = clean.0.worst_rotation(&clean.1.calibration);
    let rn = noisy.0.worst_rotation(&noisy.1.calibration);
    let (ok_c, ok_n) = (rc <= 0.01, rn <= 0.5);
    out.report(
        5,
        "rotation error",
        ok_c && ok_n,
        format!("worst |e_rot| noiseless {rc:.4}deg (<= 0.01: {ok_c}); noisy {rn:.4}deg (<= 0.5: {ok_n})"),
    );
}

fn criterion_6(out: &mut Outcome, r: &Rendered, runs: &[&CalibrationRun]) {
    // Directional derivative of the cost from the solver's Jacobian blocks
    // against central differences of the cost itself.
    let run = runs[0];
    let map = &run.calibration.undistortion;
    let gf: Vec<GlobalFrame> = r
        .frames
        .iter()
        .filter(|f| f.role == FrameRole::Train)
        .take(6)
        .map(|f| GlobalFrame {
            undistorted: apply_undistortion_image(map, &f.frame.depth).unwrap(),
            inliers: f.wall_pixels(),
            corners: f.frame.corners.clone(),
        })
        .collect();
    let mut state = run.refinement.state.clone();
    state.poses = r
        .frames
        .iter()
        .filter(|f| f.role == FrameRole::Train)
        .take(6)
        .map(|f| f.board_to_camera)
        .collect();
    let cfg = depthcal::calib::GlobalConfig {
        pos_stride: 8,
        ..Default::default()
    };
    let problem = RefinementProblem::new(&state, &gf, &r.scene.intr_rgb, &r.scene.board, &cfg).unwrap();
    let base = problem.initial_params(&state);
    let cost = |x: &[f64]| problem.residuals(x).iter().map(|v| v * v).sum::<f64>();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut worst = 0.0f64;
    for _ in 0..10 {
        let x: Vec<f64> = base.iter().map(|b| b + rng.random_range(-1e-3..1e-3)).collect();
        let d: Vec<f64> = (0..x.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let res = problem.residuals(&x);
        let jd = problem.jacobian_vector_product(&x, &res, &d);
        let solver = 2.0 * res.iter().zip(&jd).map(|(a, b)| a * b).sum::<f64>();
        let h = 1e-6;
        let step = |s: f64| x.iter().zip(&d).map(|(a, b)| a + s * h * b).collect::<Vec<_>>();
        let fd = (cost(&step(1.0)) - cost(&step(-1.0))) / (2.0 * h);
        worst = worst.max((solver - fd).abs() / fd.abs().max(1e-12));
    }
    let monotone = runs
        .iter()
        .all(|r| r.refinement.lm.cost_trace.windows(2).all(|w| w[1] <= w[0]));
    out.report(
        6,
        "gradient and objective integrity",
        worst <= 1e-4 && monotone,
        format!("worst relative directional-derivative gap {worst:.2e} (<= 1e-4); cost traces non-increasing: {monotone}"),
    );
}

fn exact_plane_image(intr: &CameraIntrinsics, plane: &Plane) -> DepthImage {
    let data = (0..intr.width * intr.height)
        .map(|i| {
            let ray = intr.pinhole_ray((i % intr.width) as f64, (i / intr.width) as f64);
            plane.offset() / plane.normal().dot(&ray)
        })
        .collect();
    DepthImage::new(intr.width, intr.height, data).unwrap()
}

fn max_plane_residual(cloud: &OrganizedCloud) -> f64 {
    let pts: Vec<Vec3> = cloud.points().iter().flatten().copied().collect();
    let fit = fit_plane(&pts, None).unwrap();
    pts.iter().map(|p| fit.signed_distance(p).abs()).fold(0.0, f64::max)
}

fn criterion_7(out: &mut Outcome, r: &Rendered, runs: &[&CalibrationRun]) {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut unity = 0.0f64;
    for _ in 0..10_000 {
        let (bx, by) = (rng.random_range(1..=16), rng.random_range(1..=16));
        let (w, h) = (rng.random_range(1..=200), rng.random_range(1..=200));
        let m = UndistortionMap::identity(w, h, bx, by, 2).unwrap();
        let s = m.surrounding(rng.random_range(0..w), rng.random_range(0..h)).unwrap();
        unity = unity.max((s.iter().map(|c| c.weight).sum::<f64>() - 1.0).abs());
    }
    let corner = runs.iter().map(|r| r.refinement.max_invariant_violation).fold(0.0, f64::max);

    let c = &runs[0].calibration;
    let plane = Plane::new(Vec3::new(0.2, -0.1, 1.0), 2.5).unwrap();
    let img = exact_plane_image(&c.intr_depth, &plane);
    let g_applied = apply_global_cloud(&c.global, &depth_to_cloud(&img, &c.intr_depth).unwrap()).unwrap();
    let planes_residual = max_plane_residual(&g_applied);

    let f = &r.frames[0].frame;
    let raw = depth_to_cloud(&f.depth, &c.intr_depth).unwrap();
    let ident = Corrector::new(
        UndistortionMap::identity(c.intr_depth.width, c.intr_depth.height, 4, 4, 2).unwrap(),
        GlobalMap::identity(c.intr_depth.width, c.intr_depth.height, 2).unwrap(),
        c.intr_depth,
        1,
    )
    .unwrap();
    // Identity maps leave depths unchanged up to the rounding of the
    // bilinear blend.
    let once = ident.correct_depth(&f.depth).unwrap();
    let twice = ident.correct_depth(&once).unwrap();
    let close = |a: &[f64], b: &[f64]| a.iter().zip(b).all(|(x, y)| (x - y).abs() <= 1e-12 * x.abs().max(1.0));
    let cloud_close = ident
        .correct_cloud(&f.depth)
        .unwrap()
        .points()
        .iter()
        .zip(raw.points())
        .all(|(a, b)| match (a, b) {
            (Some(a), Some(b)) => (a - b).norm() <= 1e-12 * b.norm(),
            (None, None) => true,
            _ => false,
        });
    let idempotent = close(once.data(), f.depth.data()) && close(twice.data(), once.data()) && cloud_close;

    let text = c.to_text();
    let calib_rt = Calibration::parse(&text, Path::new("mem")).unwrap().to_text() == text;
    let bytes = encode_depth_pgm(&f.depth);
    let pgm_rt = encode_depth_pgm(&decode_depth_pgm(&bytes, Path::new("mem")).unwrap()) == bytes;

    let small = Rendered::new(SceneParams {
        n_train: 15,
        n_test: 1,
        seed: 21,
        ..SceneParams::default()
    });
    let deterministic = small.calibrate().calibration.to_text() == small.calibrate().calibration.to_text();

    let checks = [
        ("partition of unity <= 1e-12", unity <= 1e-12, format!("{unity:.1e}")),
        ("dependent corner <= 1e-12", corner <= 1e-12, format!("{corner:.1e}")),
        ("G keeps planes < 1e-9", planes_residual < 1e-9, format!("{planes_residual:.2e} m")),
        ("identity idempotence", idempotent, String::new()),
        ("serialization round trips", calib_rt && pgm_rt, String::new()),
        ("fixed-seed determinism", deterministic, String::new()),
    ];
    let pass = checks.iter().all(|c| c.1);
    let detail = checks
        .iter()
        .map(|(n, ok, v)| format!("{n}: {}{}", if *ok { "ok" } else { "violated" }, if v.is_empty() { String::new() } else { format!(" ({v})") }))
        .collect::<Vec<_>>()
        .join("; ");
    out.report(7, "invariant suites", pass, detail);
}

fn vga_calibration() -> Calibration {
    let intr = CameraIntrinsics::pinhole(570.0, 570.0, 319.5, 239.5, 640, 480).unwrap();
    let mut c = Calibration::identity(intr, intr, (4, 4), 2).unwrap();
    let (cols, rows) = c.undistortion.grid_size();
    for j in 0..rows {
        for i in 0..cols {
            let r2 = ((i as f64 - 80.0) / 80.0).powi(2) + ((j as f64 - 60.0) / 60.0).powi(2);
            let f = PolyFn::new(vec![1e-4 * r2, 1.0 - 2e-3 * r2, -3e-3 * r2], false).unwrap();
            c.undistortion.set_function(i, j, f).unwrap();
        }
    }
    c.global = GlobalMap::from_free_params(640, 480, 2, &[0.97, 0.008, 0.972, 0.0079, 0.968, 0.0081]).unwrap();
    c
}

fn criterion_8(out: &mut Outcome) {
    let c = vga_calibration();
    let single = bench(&c, 100, 1).unwrap();
    let threads = std::thread::available_parallelism().map_or(2, |n| n.get()).max(2);
    let multi = bench(&c, 100, threads).unwrap();
    let identical = single.checksum == multi.checksum;
    let pass = single.mean_ms < 33.3 && multi.mean_ms < single.mean_ms && identical;
    out.report(
        8,
        "runtime",
        pass,
        format!(
            "640x480 single thread mean {:.2}ms p99 {:.2}ms (< 33.3ms); {} threads mean {:.2}ms (faster: {}); identical output: {identical}; cores available {}",
            single.mean_ms,
            single.p99_ms,
            multi.threads,
            multi.mean_ms,
            multi.mean_ms < single.mean_ms,
            std::thread::available_parallelism().map_or(1, |n| n.get()),
        ),
    );
}

fn main() -> ExitCode {
    let mut out = Outcome { failed: Vec::new() };

    let wall_clean = Rendered::new(wall_only(false));
    let wall_noisy = Rendered::new(wall_only(true));
    let map2 = wall_clean.stage_one(2);
    criterion_1(&mut out, &wall_clean, &wall_noisy, &map2);
    criterion_2(&mut out, &wall_clean, &map2);

    let full_clean = Rendered::new(SceneParams {
        noise: false,
        ..SceneParams::default()
    });
    let full_noisy = Rendered::new(SceneParams::default());
    let run_clean = full_clean.calibrate();
    let run_noisy = full_noisy.calibrate();
    let clean = (&full_clean, &run_clean);
    let noisy = (&full_noisy, &run_noisy);
    criterion_3(&mut out, clean, noisy);
    criterion_4(&mut out, clean, noisy);
    criterion_5(&mut out, clean, noisy);
    criterion_6(&mut out, &full_clean, &[&run_clean, &run_noisy]);
    criterion_7(&mut out, &full_clean, &[&run_clean, &run_noisy]);
    criterion_8(&mut out);

    if out.failed.is_empty() {
        println!("acceptance: all criteria passed");
        ExitCode::SUCCESS
    } else {
        println!("acceptance: failed criteria {:?}", out.failed);
        ExitCode::FAILURE
    }
}
