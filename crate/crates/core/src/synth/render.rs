use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use super::{FrameRole, SceneSpec};
use crate::calib::{CornerGrid, Frame};
use crate::error::{Error, Result};
use crate::geometry::{DepthImage, IndexSet, Plane, RigidTransform, Vec2};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PixelLabel {
    None,
    Wall,
    Floor,
}

/// A rendered frame together with everything the generator knows about it.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledFrame {
    pub frame: Frame,
    pub role: FrameRole,
    pub distance: f64,
    pub labels: Vec<PixelLabel>,
    pub true_depth: DepthImage,
    /// True board pose in the RGB camera frame.
    pub board_to_camera: RigidTransform,
    pub depth_to_world: RigidTransform,
    /// True wall plane in the depth frame.
    pub wall_plane: Plane,
}

impl LabeledFrame {
    /// Pixels labeled as wall with a valid rendered depth.
    pub fn wall_pixels(&self) -> IndexSet {
        let w = self.true_depth.width();
        let depth = self.frame.depth.data();
        let pixels = self
            .labels
            .iter()
            .enumerate()
            .filter(|&(i, l)| *l == PixelLabel::Wall && depth[i] > 0.0)
            .map(|(i, _)| (i % w, i / w))
            .collect();
        IndexSet::from_unique(pixels)
    }

    pub fn label(&self, u: usize, v: usize) -> PixelLabel {
        self.labels[v * self.true_depth.width() + u]
    }
}

/// Per-frame random stream: scene seed plus frame index.
fn frame_rng(scene: &SceneSpec, index: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(scene.seed.wrapping_add(index as u64))
}

/// Renders view `index`: ray-cast true depth, forward distortion, global
/// bias, then (with noise on) Gaussian noise of std `sigma(z)` and rounding to
/// millimeters. Corners are the projected board corners, plus pixel noise of
/// std `sigma_c` when noise is on.
pub fn render_frame(scene: &SceneSpec, index: usize) -> Result<LabeledFrame> {
    let view = scene
        .views
        .get(index)
        .ok_or_else(|| Error::InvalidInput(format!("view {index} out of range ({} views)", scene.views.len())))?;
    let intr = &scene.intr_depth;
    let (w, h) = (intr.width, intr.height);
    let depth_to_world = scene.depth_to_world(&view.camera_to_world);
    let mut rng = frame_rng(scene, index);
    let unit = Normal::new(0.0, 1.0).expect("valid normal");

    let mut labels = vec![PixelLabel::None; w * h];
    let mut truth = vec![0.0; w * h];
    let mut observed = vec![0.0; w * h];
    let mut wall_seen = false;
    for v in 0..h {
        for u in 0..w {
            let i = v * w + u;
            let Some((z, label)) = scene.cast(&depth_to_world, u as f64, v as f64) else {
                continue;
            };
            wall_seen |= label == PixelLabel::Wall;
            labels[i] = label;
            truth[i] = z;
            let mut d = scene.distortion.observe(u, v, z);
            if scene.noise {
                d += scene.noise_model.sigma(d) * unit.sample(&mut rng);
                d = (d * 1000.0).round() / 1000.0;
            }
            observed[i] = if d > 0.0 { d } else { 0.0 };
        }
    }
    if !wall_seen {
        return Err(Error::Degenerate(format!("view {index} sees no wall")));
    }

    let world_to_camera = view.camera_to_world.inverse();
    let board_to_camera = world_to_camera.compose(&scene.board_to_world);
    let mut corners = Vec::with_capacity(scene.board.len());
    for b in scene.board.points() {
        let mut px: Vec2 = scene.intr_rgb.project_point(&board_to_camera.transform_point(&b))?;
        if scene.noise && scene.sigma_c > 0.0 {
            px.x += scene.sigma_c * unit.sample(&mut rng);
            px.y += scene.sigma_c * unit.sample(&mut rng);
        }
        corners.push(px);
    }

    Ok(LabeledFrame {
        frame: Frame {
            id: index,
            depth: DepthImage::new(w, h, observed)?,
            corners: CornerGrid::new(scene.board.rows(), scene.board.cols(), corners)?,
        },
        role: view.role,
        distance: view.distance,
        labels,
        true_depth: DepthImage::new(w, h, truth)?,
        board_to_camera,
        depth_to_world,
        wall_plane: scene.wall_in_depth_frame(view),
    })
}

/// Renders every view. Frames are independent, so the result does not
/// depend on the number of worker threads.
pub fn render_all(scene: &SceneSpec) -> Result<Vec<LabeledFrame>> {
    (0..scene.views.len()).into_par_iter().map(|k| render_frame(scene, k)).collect()
}
