use nalgebra::UnitQuaternion;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::GroundTruthDistortion;
use crate::calib::BoardSpec;
use crate::error::{Error, Result};
use crate::geometry::{CameraIntrinsics, NoiseModel, Plane, RigidTransform, Vec3};

/// Stream id mixed into the seed for view placement, so it does not share
/// random numbers with per-frame rendering.
const VIEW_STREAM: u64 = 0x5eed_0001;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FrameRole {
    Train,
    Test,
}

impl FrameRole {
    pub fn as_str(&self) -> &'static str {
        match self {
            FrameRole::Train => "train",
            FrameRole::Test => "test",
        }
    }
}

impl std::str::FromStr for FrameRole {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(FrameRole::Train),
            "test" => Ok(FrameRole::Test),
            other => Err(Error::InvalidInput(format!("unknown frame role '{other}'"))),
        }
    }
}

/// One placement of the sensor pair.
#[derive(Debug, Clone, PartialEq)]
pub struct SensorView {
    pub camera_to_world: RigidTransform,
    pub role: FrameRole,
    /// Test views: true wall distance from the depth sensor. Training views:
    /// distance to the aimed point along the optical axis.
    pub distance: f64,
}

/// Parameters from which a scene is generated.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneParams {
    pub intr_depth: CameraIntrinsics,
    pub intr_rgb: CameraIntrinsics,
    /// True camera-to-depth transform.
    pub extrinsic: RigidTransform,
    /// Rough camera-to-depth guess handed to calibration.
    pub extrinsic_guess: RigidTransform,
    pub board: BoardSpec,
    /// Floor plane `floor_distance` meters below the board center, if any.
    pub floor_distance: Option<f64>,
    /// Target planarity RMS (meters) of the bowl at `distortion_depth`.
    pub distortion_rms: f64,
    pub distortion_depth: f64,
    pub distortion_bin: usize,
    pub distortion_tilt: (f64, f64),
    /// Global bias correction `true = s x + q x^2`.
    pub bias: (f64, f64),
    pub noise: bool,
    pub noise_model: NoiseModel,
    pub sigma_c: f64,
    pub max_range: f64,
    pub n_train: usize,
    pub n_test: usize,
    pub train_range: (f64, f64),
    pub test_range: (f64, f64),
    /// Largest yaw / pitch of training views (degrees).
    pub max_angle_deg: f64,
    pub seed: u64,
}

impl Default for SceneParams {
    fn default() -> Self {
        let skew = Vec3::new(0.3, -0.8, 0.5).normalize();
        Self {
            intr_depth: CameraIntrinsics::pinhole(285.0, 285.0, 159.5, 119.5, 320, 240).expect("valid"),
            intr_rgb: CameraIntrinsics::new(
                525.0,
                525.0,
                319.5,
                239.5,
                [0.02, -0.05, 0.0],
                [0.0005, -0.0003],
                640,
                480,
            )
            .expect("valid"),
            extrinsic: RigidTransform::from_axis_angle(&skew, 0.8f64.to_radians(), Vec3::new(0.025, 0.004, -0.006)),
            extrinsic_guess: RigidTransform::from_translation(Vec3::new(0.025, 0.0, 0.0)),
            board: BoardSpec::new(6, 8, 0.06).expect("valid"),
            floor_distance: None,
            distortion_rms: 0.04,
            distortion_depth: 4.0,
            distortion_bin: 4,
            distortion_tilt: (0.0, 0.0),
            bias: (0.97, 0.008),
            noise: true,
            noise_model: NoiseModel::default(),
            sigma_c: 0.2,
            max_range: 8.0,
            n_train: 50,
            n_test: 8,
            train_range: (1.0, 4.5),
            test_range: (1.0, 4.5),
            max_angle_deg: 20.0,
            seed: 1,
        }
    }
}

/// Fully specified synthetic scene: wall at world `z = 0` (normal towards
/// the sensors at negative `z`), optional floor, board on the wall, and the
/// list of sensor placements.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneSpec {
    pub wall: Plane,
    pub floor: Option<Plane>,
    pub board: BoardSpec,
    pub board_to_world: RigidTransform,
    /// True camera-to-depth transform.
    pub extrinsic: RigidTransform,
    pub extrinsic_guess: RigidTransform,
    pub intr_rgb: CameraIntrinsics,
    pub intr_depth: CameraIntrinsics,
    pub distortion: GroundTruthDistortion,
    pub noise: bool,
    pub noise_model: NoiseModel,
    pub sigma_c: f64,
    pub max_range: f64,
    pub seed: u64,
    pub views: Vec<SensorView>,
}

/// Bowl whose planarity RMS at `depth` matches `rms`.
pub fn bowl_for_rms(
    intr: &CameraIntrinsics,
    bin: usize,
    rms: f64,
    depth: f64,
    tilt: (f64, f64),
) -> Result<GroundTruthDistortion> {
    let make = |peak: f64| {
        GroundTruthDistortion::bowl_with_tilt(intr.width, intr.height, bin, peak, depth, tilt.0, tilt.1)
    };
    if rms == 0.0 {
        return make(0.0);
    }
    let mut peak = rms * 4.0;
    for _ in 0..20 {
        let got = make(peak)?.planarity_rms(intr, depth)?;
        if got <= 0.0 {
            break;
        }
        let next = peak * rms / got;
        if (next - peak).abs() <= 1e-12 * peak {
            break;
        }
        peak = next;
    }
    make(peak)
}

fn look_rotation(yaw: f64, pitch: f64, roll: f64) -> UnitQuaternion<f64> {
    UnitQuaternion::from_axis_angle(&Vec3::y_axis(), yaw)
        * UnitQuaternion::from_axis_angle(&Vec3::x_axis(), pitch)
        * UnitQuaternion::from_axis_angle(&Vec3::z_axis(), roll)
}

impl SceneSpec {
    pub fn build(p: &SceneParams) -> Result<Self> {
        p.intr_depth.validate()?;
        p.intr_rgb.validate()?;
        if p.n_train + p.n_test == 0 {
            return Err(Error::InvalidInput("scene has no views".into()));
        }
        let ranges_ok = |(lo, hi): (f64, f64)| lo > 0.0 && hi >= lo;
        if !ranges_ok(p.train_range) || !ranges_ok(p.test_range) {
            return Err(Error::InvalidInput("distance ranges must be positive and ordered".into()));
        }
        if !(p.sigma_c >= 0.0) || !(p.max_range > 0.0) {
            return Err(Error::InvalidInput("sigma_c and max_range must be non-negative".into()));
        }
        let distortion = bowl_for_rms(
            &p.intr_depth,
            p.distortion_bin,
            p.distortion_rms,
            p.distortion_depth,
            p.distortion_tilt,
        )?
        .with_bias(p.bias.0, p.bias.1)?;
        let board_to_world = RigidTransform::from_translation(-p.board.center());
        let wall = Plane::new(Vec3::new(0.0, 0.0, 1.0), 0.0)?;
        let floor = match p.floor_distance {
            Some(h) if h > 0.0 => Some(Plane::new(Vec3::new(0.0, 1.0, 0.0), h)?),
            Some(h) => return Err(Error::InvalidInput(format!("floor distance must be positive, got {h}"))),
            None => None,
        };
        let mut scene = Self {
            wall,
            floor,
            board: p.board,
            board_to_world,
            extrinsic: p.extrinsic,
            extrinsic_guess: p.extrinsic_guess,
            intr_rgb: p.intr_rgb,
            intr_depth: p.intr_depth,
            distortion,
            noise: p.noise,
            noise_model: p.noise_model.clone(),
            sigma_c: p.sigma_c,
            max_range: p.max_range,
            seed: p.seed,
            views: Vec::new(),
        };
        scene.views = scene.make_views(p)?;
        Ok(scene)
    }

    fn make_views(&self, p: &SceneParams) -> Result<Vec<SensorView>> {
        let mut rng = ChaCha8Rng::seed_from_u64(p.seed ^ VIEW_STREAM);
        let max_angle = p.max_angle_deg.to_radians();
        let mut views = Vec::with_capacity(p.n_train + p.n_test);
        let (lo, hi) = p.train_range;
        for k in 0..p.n_train {
            let mut placed = None;
            for _ in 0..200 {
                let frac = (k as f64 + 0.5 + rng.random_range(-0.4..0.4)) / p.n_train as f64;
                let dist = lo + (hi - lo) * frac;
                let yaw = rng.random_range(-max_angle..=max_angle);
                let pitch = rng.random_range(-max_angle..=max_angle);
                let roll = rng.random_range(-0.1..0.1);
                let target = Vec3::new(rng.random_range(-0.1..0.1), rng.random_range(-0.1..0.1), 0.0);
                let rotation = look_rotation(yaw, pitch, roll);
                let center = target - rotation * Vec3::z() * dist;
                let camera_to_world = RigidTransform::new(rotation, center);
                if self.view_is_usable(&camera_to_world) {
                    placed = Some(SensorView {
                        camera_to_world,
                        role: FrameRole::Train,
                        distance: dist,
                    });
                    break;
                }
            }
            views.push(placed.ok_or_else(|| {
                Error::Degenerate(format!("could not place training view {k} with the board in sight"))
            })?);
        }
        let (lo, hi) = p.test_range;
        for k in 0..p.n_test {
            let dist = if p.n_test == 1 {
                lo
            } else {
                lo + (hi - lo) * k as f64 / (p.n_test - 1) as f64
            };
            let depth_to_world = RigidTransform::from_translation(Vec3::new(0.0, 0.0, -dist));
            let camera_to_world = depth_to_world.compose(&self.extrinsic);
            if !self.view_is_usable(&camera_to_world) {
                return Err(Error::Degenerate(format!("test view at {dist} m does not see the board")));
            }
            views.push(SensorView {
                camera_to_world,
                role: FrameRole::Test,
                distance: dist,
            });
        }
        Ok(views)
    }

    /// Board fully inside the RGB image (10 px margin) and the depth image
    /// center on the wall.
    fn view_is_usable(&self, camera_to_world: &RigidTransform) -> bool {
        let world_to_camera = camera_to_world.inverse();
        let margin = 10.0;
        let (w, h) = (self.intr_rgb.width as f64, self.intr_rgb.height as f64);
        let board_ok = self.board.points().iter().all(|b| {
            let pc = world_to_camera.transform_point(&self.board_to_world.transform_point(b));
            match self.intr_rgb.project_point(&pc) {
                Ok(px) => px.x >= margin && px.x < w - margin && px.y >= margin && px.y < h - margin,
                Err(_) => false,
            }
        });
        let depth_to_world = self.depth_to_world(camera_to_world);
        let (cu, cv) = (self.intr_depth.cx, self.intr_depth.cy);
        let center_hit = self.cast(&depth_to_world, cu, cv);
        board_ok && matches!(center_hit, Some((_, super::PixelLabel::Wall)))
    }

    /// Depth-sensor pose in the world for a camera pose.
    pub fn depth_to_world(&self, camera_to_world: &RigidTransform) -> RigidTransform {
        camera_to_world.compose(&self.extrinsic.inverse())
    }

    /// True depth and surface label seen by depth pixel `(u, v)`.
    pub fn cast(&self, depth_to_world: &RigidTransform, u: f64, v: f64) -> Option<(f64, super::PixelLabel)> {
        let ray = self.intr_depth.pinhole_ray(u, v);
        let origin = depth_to_world.translation();
        let dir = depth_to_world.transform_vector(&ray);
        let hit = |plane: &Plane| {
            let denom = plane.normal().dot(&dir);
            if denom.abs() < 1e-12 {
                return None;
            }
            let z = (plane.offset() - plane.normal().dot(origin)) / denom;
            (z > 0.0).then_some(z)
        };
        let mut best = hit(&self.wall).map(|z| (z, super::PixelLabel::Wall));
        if let Some(floor) = &self.floor {
            if let Some(z) = hit(floor) {
                if best.is_none_or(|(zw, _)| z < zw) {
                    best = Some((z, super::PixelLabel::Floor));
                }
            }
        }
        best.filter(|(z, _)| *z <= self.max_range)
    }

    /// The wall plane expressed in the depth frame of a view.
    pub fn wall_in_depth_frame(&self, view: &SensorView) -> Plane {
        let world_to_depth = self.depth_to_world(&view.camera_to_world).inverse();
        crate::geometry::transform_plane(&world_to_depth, &self.wall)
    }

    pub fn n_views(&self, role: FrameRole) -> usize {
        self.views.iter().filter(|v| v.role == role).count()
    }
}
