//! Core 3D/2D geometry shared by every calibration stage.

mod camera;
mod cloud;
mod fit;
pub mod lm;
mod noise;
mod plane;
mod pnp;
mod transform;

pub use camera::CameraIntrinsics;
pub use cloud::{depth_to_cloud, DepthImage, IndexSet, OrganizedCloud};
pub(crate) use cloud::check_dims;
pub use fit::{estimate_transform_from_planes, fit_plane};
pub use lm::{lm_minimize, lm_minimize_fn, LeastSquaresProblem, LmOptions, LmReport};
pub use noise::{sigma_quantization, NoiseModel};
pub use plane::{los_project, orth_project, transform_plane, Plane};
pub use pnp::{solve_pnp, PnpSolution};
pub use transform::RigidTransform;

pub type Vec2 = nalgebra::Vector2<f64>;
pub type Vec3 = nalgebra::Vector3<f64>;
