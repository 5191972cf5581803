use log::{debug, warn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{BoardSpec, CornerGrid, Frame};
use crate::error::{Error, Result};
use crate::geometry::{
    depth_to_cloud, fit_plane, los_project, solve_pnp, CameraIntrinsics, IndexSet, NoiseModel, OrganizedCloud, Plane,
    RigidTransform, Vec3,
};
use crate::maps::{apply_undistortion_cloud, fit_weighted_poly, PolyFn, SampleSet, UndistortionMap, MAX_DEGREE};

#[derive(Debug, Clone, PartialEq)]
pub struct UndistortConfig {
    pub bin_x: usize,
    pub bin_y: usize,
    pub degree: usize,
    /// Inlier threshold in units of the expected noise at the board depth.
    pub kappa: f64,
    pub ransac_iterations: usize,
    /// Radius (pixels) around the inlier centroid used for the reference plane.
    pub fit_radius: f64,
    pub min_inliers: usize,
    /// Largest normal angle (degrees) between a candidate wall and the seed plane.
    pub max_seed_angle_deg: f64,
    /// Largest offset difference (meters) between a candidate wall and the seed plane.
    pub max_seed_offset: f64,
    pub seed: u64,
    pub noise: NoiseModel,
    /// Sample depths closer than this (meters) count as one depth when
    /// choosing the degree of a control function fit.
    pub min_depth_gap: f64,
    /// Number of passes over the frames (at least 1).
    pub passes: usize,
}

impl Default for UndistortConfig {
    fn default() -> Self {
        Self {
            bin_x: 4,
            bin_y: 4,
            degree: 2,
            kappa: 3.0,
            ransac_iterations: 200,
            fit_radius: 120.0,
            min_inliers: 500,
            max_seed_angle_deg: 30.0,
            max_seed_offset: 0.3,
            seed: 0,
            noise: NoiseModel::default(),
            min_depth_gap: 0.05,
            passes: 2,
        }
    }
}

impl UndistortConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = self.fit_radius > 0.0 && self.min_depth_gap >= 0.0 && self.max_seed_angle_deg > 0.0 && self.max_seed_offset > 0.0;
        if self.bin_x == 0 || self.bin_y == 0 || self.passes == 0 || self.ransac_iterations == 0 || self.min_inliers == 0 || !positive {
            return Err(Error::InvalidInput("undistortion settings must be positive".into()));
        }
        if !(self.kappa >= 1.0) {
            return Err(Error::InvalidInput(format!("kappa must be at least 1, got {}", self.kappa)));
        }
        if !(1..=MAX_DEGREE).contains(&self.degree) {
            return Err(Error::InvalidInput(format!("degree {} out of range 1..={MAX_DEGREE}", self.degree)));
        }
        Ok(())
    }
}

/// Frame indices in ascending board distance (camera-frame z of the board
/// origin), paired with that distance. Frames whose pose cannot be recovered
/// are dropped with a warning. Ties keep input order.
pub fn sort_frames_by_distance(frames: &[Frame], intr_rgb: &CameraIntrinsics, board: &BoardSpec) -> Vec<(usize, f64)> {
    let object = board.points();
    let mut keyed: Vec<(usize, f64)> = frames
        .iter()
        .enumerate()
        .filter_map(|(k, f)| match solve_pnp(&object, f.corners.pixels(), intr_rgb) {
            Ok(sol) => Some((k, sol.pose.translation().z)),
            Err(e) => {
                warn!("frame {}: board pose failed ({e}); dropped", f.id);
                None
            }
        })
        .collect();
    keyed.sort_by(|a, b| a.1.total_cmp(&b.1));
    keyed
}

struct Candidate {
    plane: Plane,
    members: Vec<usize>,
}

fn near_seed(p: &Plane, seed: &Plane, cfg: &UndistortConfig) -> bool {
    let cos = p.normal().dot(seed.normal()).clamp(-1.0, 1.0);
    let angle = cos.abs().acos().to_degrees();
    let offset = if cos >= 0.0 { p.offset() - seed.offset() } else { p.offset() + seed.offset() };
    angle < cfg.max_seed_angle_deg && offset.abs() < cfg.max_seed_offset
}

/// RANSAC over `points[idx]`, returning the consensus plane with the most
/// members (refined by least squares) among those accepted by `gate`.
fn ransac(
    points: &[Vec3],
    idx: &[usize],
    tau: f64,
    iterations: usize,
    rng: &mut ChaCha8Rng,
    gate: impl Fn(&Plane) -> bool,
) -> Option<Candidate> {
    if idx.len() < 3 {
        return None;
    }
    let count = |plane: &Plane| idx.iter().filter(|&&i| plane.signed_distance(&points[i]).abs() < tau).count();
    let mut best: Option<(Plane, usize)> = None;
    for _ in 0..iterations {
        let a = idx[rng.random_range(0..idx.len())];
        let b = idx[rng.random_range(0..idx.len())];
        let c = idx[rng.random_range(0..idx.len())];
        let n = (points[b] - points[a]).cross(&(points[c] - points[a]));
        let Ok(plane) = Plane::from_point_normal(&points[a], &n) else {
            continue;
        };
        if !gate(&plane) {
            continue;
        }
        let support = count(&plane);
        if best.as_ref().is_none_or(|(_, s)| support > *s) {
            best = Some((plane, support));
        }
    }
    let (mut plane, _) = best?;
    let mut members: Vec<usize> = Vec::new();
    for _ in 0..5 {
        let next: Vec<usize> = idx
            .iter()
            .copied()
            .filter(|&i| plane.signed_distance(&points[i]).abs() < tau)
            .collect();
        if next == members || next.len() < 3 {
            break;
        }
        members = next;
        let pts: Vec<Vec3> = members.iter().map(|&i| points[i]).collect();
        match fit_plane(&pts, None) {
            Ok(p) if gate(&p) => plane = p,
            _ => break,
        }
    }
    (!members.is_empty()).then_some(Candidate { plane, members })
}

pub(crate) fn select_wall_points_with_pose(
    undistorted: &OrganizedCloud,
    board_to_camera: &RigidTransform,
    t0: &RigidTransform,
    board: &BoardSpec,
    cfg: &UndistortConfig,
) -> Result<IndexSet> {
    let corners_d: Vec<Vec3> = board
        .points()
        .iter()
        .map(|b| t0.transform_point(&board_to_camera.transform_point(b)))
        .collect();
    let seed = fit_plane(&corners_d, None)?;
    let z_bar = corners_d.iter().map(|p| p.z).sum::<f64>() / corners_d.len() as f64;
    let tau = cfg.kappa * cfg.noise.sigma(z_bar).abs();

    let (pixels, points): (Vec<(usize, usize)>, Vec<Vec3>) =
        undistorted.iter_valid().map(|(u, v, p)| ((u, v), *p)).unzip();
    if points.len() < cfg.min_inliers {
        return Err(Error::NotEnoughData {
            what: "valid depth pixels",
            needed: cfg.min_inliers,
            got: points.len(),
        });
    }
    let all: Vec<usize> = (0..points.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let wall = ransac(&points, &all, tau, cfg.ransac_iterations, &mut rng, |p| near_seed(p, &seed, cfg))
        .ok_or_else(|| Error::Degenerate("no plane consistent with the checkerboard".into()))?;

    // Other large planes (floor, side walls): wall members that also lie on
    // one of them are dropped.
    let mut is_wall = vec![false; points.len()];
    for &i in &wall.members {
        is_wall[i] = true;
    }
    let mut rest: Vec<usize> = all.iter().copied().filter(|&i| !is_wall[i]).collect();
    let mut others = Vec::new();
    while rest.len() >= cfg.min_inliers && others.len() < 3 {
        let far_from_wall = |p: &Plane| !near_seed(p, &wall.plane, cfg);
        let Some(other) = ransac(&points, &rest, tau, cfg.ransac_iterations, &mut rng, far_from_wall) else {
            break;
        };
        if other.members.len() < cfg.min_inliers {
            break;
        }
        let members: std::collections::HashSet<usize> = other.members.iter().copied().collect();
        rest.retain(|i| !members.contains(i));
        debug!("other plane {:?} with {} members", other.plane, other.members.len());
        others.push(other.plane);
    }
    debug!("wall candidate {:?} with {} members, seed {:?}", wall.plane, wall.members.len(), seed);
    let inliers: Vec<(usize, usize)> = wall
        .members
        .iter()
        .copied()
        .filter(|&i| others.iter().all(|o| o.signed_distance(&points[i]).abs() >= tau))
        .map(|i| pixels[i])
        .collect();
    if inliers.len() < cfg.min_inliers {
        return Err(Error::NotEnoughData {
            what: "wall inliers",
            needed: cfg.min_inliers,
            got: inliers.len(),
        });
    }
    debug!(
        "wall: {} inliers, threshold {:.4} m, {} other planes",
        inliers.len(),
        tau,
        others.len()
    );
    Ok(IndexSet::from_unique(inliers))
}

/// Pixels of the wall holding the checkerboard.
///
/// The board pose (from the corners) mapped through `t0` seeds a RANSAC plane
/// search on the cloud; the threshold is `kappa * sigma(z)` at the board depth.
/// Points that belong to other detected planes are removed.
pub fn select_wall_points(
    undistorted: &OrganizedCloud,
    corners: &CornerGrid,
    t0: &RigidTransform,
    intr_rgb: &CameraIntrinsics,
    board: &BoardSpec,
    cfg: &UndistortConfig,
) -> Result<IndexSet> {
    let pose = solve_pnp(&board.points(), corners.pixels(), intr_rgb)?.pose;
    select_wall_points_with_pose(undistorted, &pose, t0, board, cfg)
}

/// Plane fitted to the original cloud, using only inliers within
/// `cfg.fit_radius` pixels of the inlier centroid.
pub fn fit_reference_plane(original: &OrganizedCloud, inliers: &IndexSet, cfg: &UndistortConfig) -> Result<Plane> {
    let (cu, cv) = inliers.centroid().ok_or(Error::NotEnoughData {
        what: "wall inliers",
        needed: 3,
        got: 0,
    })?;
    let r2 = cfg.fit_radius * cfg.fit_radius;
    let pts: Vec<Vec3> = inliers
        .iter()
        .filter(|&&(u, v)| (u as f64 - cu).powi(2) + (v as f64 - cv).powi(2) <= r2)
        .filter_map(|&(u, v)| original.get(u, v).copied())
        .collect();
    if pts.len() < 3 {
        return Err(Error::NotEnoughData {
            what: "points inside the fit radius",
            needed: 3,
            got: pts.len(),
        });
    }
    fit_plane(&pts, None)
}

/// Per control pixel weighted means `(z, z_pi)` of the inliers whose stencil
/// includes it, where `z_pi` is the depth of the line-of-sight projection onto
/// `plane`. `None` where no inlier contributes.
pub fn accumulate_weighted_means(
    cloud: &OrganizedCloud,
    inliers: &IndexSet,
    plane: &Plane,
    bin_x: usize,
    bin_y: usize,
) -> Vec<Option<(f64, f64)>> {
    let cols = cloud.width().div_ceil(bin_x) + 1;
    let rows = cloud.height().div_ceil(bin_y) + 1;
    let mut acc = vec![(0.0, 0.0, 0.0); cols * rows];
    for &(u, v) in inliers.iter() {
        let Some(x) = cloud.get(u, v) else { continue };
        let Ok(xp) = los_project(x, plane) else { continue };
        if !(xp.z > 0.0) {
            continue;
        }
        for (i, j, w) in crate::maps::bilinear_stencil(u, v, bin_x, bin_y) {
            if w > 0.0 {
                let a = &mut acc[j * cols + i];
                a.0 += w;
                a.1 += w * x.z;
                a.2 += w * xp.z;
            }
        }
    }
    acc.into_iter()
        .map(|(w, wz, wzp)| (w > 0.0).then(|| (wz / w, wzp / w)))
        .collect()
}

/// Sample sets of every control pixel of a map.
#[derive(Debug, Clone, PartialEq)]
pub struct MapSamples {
    cols: usize,
    rows: usize,
    sets: Vec<SampleSet>,
}

impl MapSamples {
    pub fn new(cols: usize, rows: usize) -> Self {
        Self {
            cols,
            rows,
            sets: vec![SampleSet::new(); cols * rows],
        }
    }

    pub fn for_map(map: &UndistortionMap) -> Self {
        let (c, r) = map.grid_size();
        Self::new(c, r)
    }

    pub fn get(&self, i: usize, j: usize) -> &SampleSet {
        &self.sets[j * self.cols + i]
    }

    pub fn grid_size(&self) -> (usize, usize) {
        (self.cols, self.rows)
    }

    pub fn total(&self) -> usize {
        self.sets.iter().map(SampleSet::len).sum()
    }
}

/// Number of groups of sample depths separated by at least `gap`.
fn depth_clusters(set: &SampleSet, gap: f64) -> usize {
    let mut z: Vec<f64> = set.samples().iter().map(|s| s.0).collect();
    z.sort_by(f64::total_cmp);
    1 + z.windows(2).filter(|w| w[1] - w[0] >= gap).count()
}

/// Weighted fit of a control function whose degree is capped by the number
/// of well separated sample depths; higher coefficients are zero. `None`
/// while the samples cover a single depth.
fn fit_control(set: &SampleSet, degree: usize, cfg: &UndistortConfig) -> Result<Option<PolyFn>> {
    if set.is_empty() {
        return Ok(None);
    }
    let effective = degree.min(depth_clusters(set, cfg.min_depth_gap) - 1);
    if effective == 0 {
        return Ok(None);
    }
    let f = fit_weighted_poly(set, &cfg.noise, effective, false)?;
    let mut coeffs = f.coeffs().to_vec();
    coeffs.resize(degree + 1, 0.0);
    PolyFn::new(coeffs, false).map(Some)
}

/// Adds one weighted-mean sample per control pixel touched by the inliers and
/// refits those control functions. Returns the number of refitted functions.
///
/// The fit degree is lowered while the samples of a control pixel span fewer
/// than `degree + 1` distinct depths (see `UndistortConfig::min_depth_gap`).
/// A control pixel whose fit fails keeps its previous function.
pub fn update_map(
    map: &mut UndistortionMap,
    samples: &mut MapSamples,
    original: &OrganizedCloud,
    inliers: &IndexSet,
    plane: &Plane,
    cfg: &UndistortConfig,
) -> Result<usize> {
    if (original.width(), original.height()) != (map.width(), map.height()) {
        return Err(Error::DimensionMismatch {
            expected: format!("{}x{} (map)", map.width(), map.height()),
            got: format!("{}x{}", original.width(), original.height()),
        });
    }
    if samples.grid_size() != map.grid_size() {
        return Err(Error::DimensionMismatch {
            expected: format!("{:?} sample grid", map.grid_size()),
            got: format!("{:?}", samples.grid_size()),
        });
    }
    let (bx, by) = map.bin_size();
    let means = accumulate_weighted_means(original, inliers, plane, bx, by);
    let cols = samples.cols;
    let mut refitted = 0;
    for (k, mean) in means.into_iter().enumerate() {
        let Some((z, zp)) = mean else { continue };
        let set = &mut samples.sets[k];
        if set.push(z, zp).is_err() {
            continue;
        }
        match fit_control(set, map.degree(), cfg) {
            Ok(Some(f)) => {
                map.set_function(k % cols, k / cols, f)?;
                refitted += 1;
            }
            Ok(None) => {}
            Err(e) => debug!("control pixel ({}, {}) keeps its function: {e}", k % cols, k / cols),
        }
    }
    Ok(refitted)
}

#[derive(Debug, Clone)]
pub struct UndistortionEstimate {
    pub map: UndistortionMap,
    pub samples: MapSamples,
    /// Processing order (indices into the input frames), nearest first.
    pub order: Vec<usize>,
    /// Wall inliers per input frame; `None` for dropped frames.
    pub inliers: Vec<Option<IndexSet>>,
    /// Reference plane per input frame; `None` for dropped frames.
    pub planes: Vec<Option<Plane>>,
}

impl UndistortionEstimate {
    pub fn used_frames(&self) -> usize {
        self.inliers.iter().flatten().count()
    }
}

/// Builds the undistortion map from wall views, nearest frame first. Each
/// frame is undistorted with the map built so far, its wall points selected
/// on the undistorted cloud, and the map updated against a plane fitted to
/// the original cloud.
///
/// With `cfg.passes > 1` the map is rebuilt from scratch in each later pass;
/// wall points are then selected with the complete map of the previous pass,
/// which reaches image regions that enter the inlier band only late in a
/// single pass.
pub fn estimate_undistortion_map(
    frames: &[Frame],
    t0: &RigidTransform,
    intr_rgb: &CameraIntrinsics,
    intr_depth: &CameraIntrinsics,
    board: &BoardSpec,
    cfg: &UndistortConfig,
) -> Result<UndistortionEstimate> {
    cfg.validate()?;
    let order = sort_frames_by_distance(frames, intr_rgb, board);
    let mut estimate = single_pass(frames, &order, None, t0, intr_rgb, intr_depth, board, cfg)?;
    for pass in 1..cfg.passes {
        debug!("undistortion pass {}", pass + 1);
        estimate = single_pass(frames, &order, Some(&estimate.map), t0, intr_rgb, intr_depth, board, cfg)?;
    }
    Ok(estimate)
}

#[allow(clippy::too_many_arguments)]
fn single_pass(
    frames: &[Frame],
    order_by_distance: &[(usize, f64)],
    selection_map: Option<&UndistortionMap>,
    t0: &RigidTransform,
    intr_rgb: &CameraIntrinsics,
    intr_depth: &CameraIntrinsics,
    board: &BoardSpec,
    cfg: &UndistortConfig,
) -> Result<UndistortionEstimate> {
    let mut map = UndistortionMap::identity(intr_depth.width, intr_depth.height, cfg.bin_x, cfg.bin_y, cfg.degree)?;
    let mut samples = MapSamples::for_map(&map);
    let mut inliers = vec![None; frames.len()];
    let mut planes = vec![None; frames.len()];
    let mut order = Vec::new();
    let object = board.points();

    for (pos, &(k, dist)) in order_by_distance.iter().enumerate() {
        let frame = &frames[k];
        let result = (|| -> Result<(IndexSet, Plane, usize)> {
            frame.corners.validate(board, intr_rgb)?;
            let pose = solve_pnp(&object, frame.corners.pixels(), intr_rgb)?.pose;
            let original = depth_to_cloud(&frame.depth, intr_depth)?;
            let undistorted = apply_undistortion_cloud(selection_map.unwrap_or(&map), &original)?;
            let frame_cfg = UndistortConfig {
                seed: cfg.seed.wrapping_add(pos as u64),
                ..cfg.clone()
            };
            let wall = select_wall_points_with_pose(&undistorted, &pose, t0, board, &frame_cfg)?;
            let plane = fit_reference_plane(&original, &wall, cfg)?;
            let n = update_map(&mut map, &mut samples, &original, &wall, &plane, cfg)?;
            Ok((wall, plane, n))
        })();
        match result {
            Ok((wall, plane, n)) => {
                debug!(
                    "frame {} at {dist:.3} m: {} wall points, {n} functions refitted",
                    frame.id,
                    wall.len()
                );
                inliers[k] = Some(wall);
                planes[k] = Some(plane);
                order.push(k);
            }
            Err(e) => warn!("frame {}: skipped ({e})", frame.id),
        }
    }
    let needed = cfg.degree + 1;
    if order.len() < needed {
        return Err(Error::NotEnoughData {
            what: "usable calibration frames",
            needed,
            got: order.len(),
        });
    }
    Ok(UndistortionEstimate {
        map,
        samples,
        order,
        inliers,
        planes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::DepthImage;
    use crate::synth::{render_frame, GroundTruthDistortion, PixelLabel, SceneParams, SceneSpec};
    use approx::assert_relative_eq;
    use std::collections::HashSet;

    fn scene(floor: Option<f64>, n_test: usize, exact: bool) -> SceneSpec {
        let p = SceneParams {
            floor_distance: floor,
            noise: false,
            n_train: 0,
            n_test,
            bias: (1.0, 0.0),
            ..SceneParams::default()
        };
        let mut s = SceneSpec::build(&p).unwrap();
        if exact {
            s.distortion = GroundTruthDistortion::identity(320, 240);
        }
        s
    }

    fn flat_cloud(depth: f64, scale: f64) -> OrganizedCloud {
        let intr = CameraIntrinsics::pinhole(30.0, 30.0, 15.5, 11.5, 32, 24).unwrap();
        depth_to_cloud(&DepthImage::new(32, 24, vec![depth * scale; 32 * 24]).unwrap(), &intr).unwrap()
    }

    fn all_pixels(w: usize, h: usize) -> IndexSet {
        IndexSet::new((0..h).flat_map(|v| (0..w).map(move |u| (u, v))).collect(), w, h).unwrap()
    }

    #[test]
    fn wall_only_scene_selects_every_wall_pixel() {
        let s = scene(None, 3, true);
        let f = render_frame(&s, 1).unwrap();
        let cloud = depth_to_cloud(&f.frame.depth, &s.intr_depth).unwrap();
        let cfg = UndistortConfig::default();
        let sel = select_wall_points(&cloud, &f.frame.corners, &s.extrinsic, &s.intr_rgb, &s.board, &cfg).unwrap();
        let got: HashSet<_> = sel.iter().copied().collect();
        let want: HashSet<_> = f.wall_pixels().iter().copied().collect();
        assert_eq!(got, want);
    }

    #[test]
    fn floor_pixels_are_excluded() {
        let s = scene(Some(1.3), 2, true);
        let f = render_frame(&s, 1).unwrap();
        let floor = f.labels.iter().filter(|l| **l == PixelLabel::Floor).count();
        assert!(floor > 1000, "test view should see the floor ({floor} pixels)");
        let cloud = depth_to_cloud(&f.frame.depth, &s.intr_depth).unwrap();
        let cfg = UndistortConfig::default();
        let sel = select_wall_points(&cloud, &f.frame.corners, &s.extrinsic_guess, &s.intr_rgb, &s.board, &cfg).unwrap();
        assert!(sel.iter().all(|&(u, v)| f.label(u, v) == PixelLabel::Wall));
        assert!(sel.len() as f64 > 0.9 * f.wall_pixels().len() as f64);
    }

    #[test]
    fn empty_image_has_no_wall() {
        let s = scene(None, 1, true);
        let f = render_frame(&s, 0).unwrap();
        let empty = depth_to_cloud(&DepthImage::empty(320, 240), &s.intr_depth).unwrap();
        let r = select_wall_points(&empty, &f.frame.corners, &s.extrinsic, &s.intr_rgb, &s.board, &UndistortConfig::default());
        assert!(matches!(r, Err(Error::NotEnoughData { .. })));
    }

    #[test]
    fn reference_plane_radius() {
        let s = scene(None, 2, false);
        let f = render_frame(&s, 1).unwrap();
        let cloud = depth_to_cloud(&f.frame.depth, &s.intr_depth).unwrap();
        let inliers = f.wall_pixels();
        let cfg = UndistortConfig::default();

        // Radius restriction matches an explicit fit over the disc.
        let (cu, cv) = inliers.centroid().unwrap();
        let disc: Vec<Vec3> = inliers
            .iter()
            .filter(|&&(u, v)| (u as f64 - cu).hypot(v as f64 - cv) <= cfg.fit_radius)
            .map(|&(u, v)| *cloud.get(u, v).unwrap())
            .collect();
        let expected = fit_plane(&disc, None).unwrap();
        let got = fit_reference_plane(&cloud, &inliers, &cfg).unwrap();
        assert_relative_eq!(got.offset(), expected.offset(), epsilon = 1e-12);

        // A radius larger than the image is the unrestricted fit.
        let wide = UndistortConfig { fit_radius: 1e4, ..cfg.clone() };
        let all: Vec<Vec3> = inliers.iter().map(|&(u, v)| *cloud.get(u, v).unwrap()).collect();
        let full = fit_plane(&all, None).unwrap();
        assert_relative_eq!(fit_reference_plane(&cloud, &inliers, &wide).unwrap().offset(), full.offset(), epsilon = 1e-12);

        // On the bowl-distorted wall the fitted depth at the center lies within the surface range.
        let zs: Vec<f64> = all.iter().map(|p| p.z).collect();
        let (lo, hi) = zs.iter().fold((f64::MAX, f64::MIN), |(a, b), &z| (a.min(z), b.max(z)));
        let center = los_project(&Vec3::new(0.0, 0.0, 1.0), &got).unwrap().z;
        assert!(lo <= center && center <= hi, "{lo} <= {center} <= {hi}");

        let tiny = UndistortConfig { fit_radius: 1e-3, ..cfg };
        let few = IndexSet::new(vec![(0, 0), (319, 239)], 320, 240).unwrap();
        assert!(fit_reference_plane(&cloud, &few, &tiny).is_err());
    }

    #[test]
    fn weighted_means_match_brute_force() {
        // Tilted plane seen through an irregular inlier set.
        let intr = CameraIntrinsics::pinhole(100.0, 100.0, 15.5, 11.5, 32, 24).unwrap();
        let plane = Plane::new(Vec3::new(0.2, -0.1, 1.0), 2.0).unwrap();
        let data: Vec<f64> = (0..24)
            .flat_map(|v| (0..32).map(move |u| (u, v)))
            .map(|(u, v)| {
                let ray = intr.pinhole_ray(u as f64, v as f64);
                plane.offset() / plane.normal().dot(&ray) * (1.0 + 0.001 * ((u * 7 + v * 3) % 5) as f64)
            })
            .collect();
        let cloud = depth_to_cloud(&DepthImage::new(32, 24, data).unwrap(), &intr).unwrap();
        let pix: Vec<(usize, usize)> = (0..24).flat_map(|v| (0..32).map(move |u| (u, v))).filter(|(u, v)| (u + 2 * v) % 3 != 0).collect();
        let inliers = IndexSet::new(pix.clone(), 32, 24).unwrap();
        let (bx, by) = (5, 4);
        let means = accumulate_weighted_means(&cloud, &inliers, &plane, bx, by);
        let cols = 32usize.div_ceil(bx) + 1;
        for (k, m) in means.iter().enumerate() {
            let (s, t) = ((k % cols * bx) as f64, (k / cols * by) as f64);
            let (mut w, mut wz, mut wzp) = (0.0, 0.0, 0.0);
            for &(u, v) in &pix {
                let wt = (1.0 - (u as f64 - s).abs() / bx as f64).max(0.0) * (1.0 - (v as f64 - t).abs() / by as f64).max(0.0);
                if wt > 0.0 {
                    let p = cloud.get(u, v).unwrap();
                    let zp = plane.offset() / plane.normal().dot(&(p / p.z));
                    w += wt;
                    wz += wt * p.z;
                    wzp += wt * zp;
                }
            }
            match m {
                Some((z, zp)) => {
                    assert_relative_eq!(*z, wz / w, epsilon = 1e-12);
                    assert_relative_eq!(*zp, wzp / w, epsilon = 1e-12);
                }
                None => assert_eq!(w, 0.0),
            }
        }
    }

    #[test]
    fn update_map_learns_uniform_scale() {
        let mut map = UndistortionMap::identity(32, 24, 4, 4, 2).unwrap();
        let mut samples = MapSamples::for_map(&map);
        let cfg = UndistortConfig::default();
        let all = all_pixels(32, 24);
        for d in [1.0, 2.0, 3.0] {
            let cloud = flat_cloud(d, 1.02);
            let plane = Plane::new(Vec3::z(), d).unwrap();
            let n = update_map(&mut map, &mut samples, &cloud, &all, &plane, &cfg).unwrap();
            assert_eq!(n, if d == 1.0 { 0 } else { 9 * 7 });
        }
        assert_eq!(samples.total(), 3 * 9 * 7);
        for d in [1.5, 2.5, 4.0] {
            assert_relative_eq!(map.undistort_depth(7, 5, 1.02 * d), d, epsilon = 1e-9);
        }
    }

    #[test]
    fn close_depths_lower_the_fit_degree() {
        let mut map = UndistortionMap::identity(32, 24, 4, 4, 2).unwrap();
        let mut samples = MapSamples::for_map(&map);
        let cfg = UndistortConfig::default();
        let all = all_pixels(32, 24);
        // Two depths 1 mm apart form one cluster: nothing is fitted.
        for d in [2.0, 2.001] {
            let plane = Plane::new(Vec3::z(), d).unwrap();
            assert_eq!(update_map(&mut map, &mut samples, &flat_cloud(d, 1.01), &all, &plane, &cfg).unwrap(), 0);
        }
        // A separated third depth allows a line, not a parabola.
        let plane = Plane::new(Vec3::z(), 3.0).unwrap();
        update_map(&mut map, &mut samples, &flat_cloud(3.0, 1.01), &all, &plane, &cfg).unwrap();
        let f = map.function(2, 2);
        assert_eq!(f.coeffs()[2], 0.0);
        assert_relative_eq!(f.eval(1.01 * 2.5), 2.5, epsilon = 1e-9);
    }

    #[test]
    fn update_map_checks_dimensions() {
        let mut map = UndistortionMap::identity(32, 24, 4, 4, 2).unwrap();
        let mut samples = MapSamples::new(3, 3);
        let plane = Plane::new(Vec3::z(), 1.0).unwrap();
        let r = update_map(&mut map, &mut samples, &flat_cloud(1.0, 1.0), &all_pixels(32, 24), &plane, &UndistortConfig::default());
        assert!(matches!(r, Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn frames_sort_by_board_distance() {
        let s = scene(None, 4, true);
        let mut frames: Vec<Frame> = (0..4).map(|k| render_frame(&s, k).unwrap().frame).collect();
        frames.reverse();
        let order = sort_frames_by_distance(&frames, &s.intr_rgb, &s.board);
        assert_eq!(order.iter().map(|o| o.0).collect::<Vec<_>>(), vec![3, 2, 1, 0]);
        assert!(order.windows(2).all(|w| w[0].1 <= w[1].1));
    }

    #[test]
    fn config_validation() {
        assert!(UndistortConfig::default().validate().is_ok());
        assert!(UndistortConfig { kappa: 0.5, ..UndistortConfig::default() }.validate().is_err());
        assert!(UndistortConfig { passes: 0, ..UndistortConfig::default() }.validate().is_err());
        assert!(UndistortConfig { degree: 9, ..UndistortConfig::default() }.validate().is_err());
    }
}
