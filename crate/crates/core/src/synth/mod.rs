//! Synthetic RGB-D sensor with known distortion, bias, noise and extrinsics,
//! plus the evaluation metrics used to score a calibration.

mod distortion;
mod metrics;
mod render;
mod scene;

pub use distortion::{GroundTruthDistortion, MONOTONE_RANGE};
pub use metrics::{depth_vs_ground_truth, global_error, planarity_error, rotation_error};
pub use render::{render_all, render_frame, LabeledFrame, PixelLabel};
pub use scene::{bowl_for_rms, FrameRole, SceneParams, SceneSpec, SensorView};
