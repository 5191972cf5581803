//! Calibration toolkit for RGB-D sensor pairs.
//!
//! The pipeline estimates a binned per-pixel undistortion map, a four-corner
//! global correction map and the camera-to-depth rigid transform from views of
//! a wall with a checkerboard, and applies the resulting corrections to depth
//! frames. A synthetic sensor makes every stage testable without hardware.

pub mod error;
pub mod geometry;
pub mod calib;
pub mod io;
pub mod maps;
pub mod pipeline;
pub mod synth;

pub use error::{Error, Result};
