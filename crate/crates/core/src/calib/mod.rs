//! Two-stage calibration: the undistortion map from wall views, then the
//! global map, extrinsics and depth intrinsics by joint refinement.

mod global;
mod undistort;

pub use global::{
    init_global, refine, residual_pos, residual_repr, GlobalConfig, GlobalFrame, GlobalInit, RefinementProblem,
    RefinementReport, RefinementState,
};
pub use undistort::{
    accumulate_weighted_means, estimate_undistortion_map, fit_reference_plane, select_wall_points,
    sort_frames_by_distance, update_map, MapSamples, UndistortConfig, UndistortionEstimate,
};

use crate::error::{Error, Result};
use crate::geometry::{CameraIntrinsics, DepthImage, Vec2, Vec3};

/// Checkerboard geometry: `rows x cols` inner corners spaced `square` meters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoardSpec {
    rows: usize,
    cols: usize,
    square: f64,
}

impl BoardSpec {
    pub fn new(rows: usize, cols: usize, square: f64) -> Result<Self> {
        if rows < 3 || cols < 3 {
            return Err(Error::InvalidInput(format!("board needs at least 3x3 inner corners, got {rows}x{cols}")));
        }
        if !(square > 0.0 && square.is_finite()) {
            return Err(Error::InvalidInput(format!("square size must be positive, got {square}")));
        }
        Ok(Self { rows, cols, square })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn square(&self) -> f64 {
        self.square
    }

    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Corner `(r, c)` in the board frame.
    pub fn corner(&self, r: usize, c: usize) -> Vec3 {
        Vec3::new(c as f64 * self.square, r as f64 * self.square, 0.0)
    }

    /// All corners, row-major.
    pub fn points(&self) -> Vec<Vec3> {
        (0..self.rows)
            .flat_map(|r| (0..self.cols).map(move |c| (r, c)))
            .map(|(r, c)| self.corner(r, c))
            .collect()
    }

    /// Center of the corner grid in the board frame.
    pub fn center(&self) -> Vec3 {
        Vec3::new(
            (self.cols - 1) as f64 * self.square / 2.0,
            (self.rows - 1) as f64 * self.square / 2.0,
            0.0,
        )
    }
}

/// Detected checkerboard corners in RGB pixel coordinates, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct CornerGrid {
    rows: usize,
    cols: usize,
    pixels: Vec<Vec2>,
}

impl CornerGrid {
    pub fn new(rows: usize, cols: usize, pixels: Vec<Vec2>) -> Result<Self> {
        if pixels.len() != rows * cols || rows == 0 || cols == 0 {
            return Err(Error::DimensionMismatch {
                expected: format!("{} corners ({rows}x{cols})", rows * cols),
                got: format!("{} corners", pixels.len()),
            });
        }
        if pixels.iter().any(|p| !p.x.is_finite() || !p.y.is_finite()) {
            return Err(Error::InvalidInput("non-finite corner coordinate".into()));
        }
        Ok(Self { rows, cols, pixels })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, r: usize, c: usize) -> Vec2 {
        self.pixels[r * self.cols + c]
    }

    pub fn pixels(&self) -> &[Vec2] {
        &self.pixels
    }

    /// Checks the grid against a board and an image.
    pub fn validate(&self, board: &BoardSpec, intr: &CameraIntrinsics) -> Result<()> {
        if (self.rows, self.cols) != (board.rows(), board.cols()) {
            return Err(Error::DimensionMismatch {
                expected: format!("{}x{} corners", board.rows(), board.cols()),
                got: format!("{}x{} corners", self.rows, self.cols),
            });
        }
        let (w, h) = (intr.width as f64, intr.height as f64);
        if let Some(p) = self.pixels.iter().find(|p| !(0.0..w).contains(&p.x) || !(0.0..h).contains(&p.y)) {
            return Err(Error::InvalidInput(format!(
                "corner ({}, {}) outside the {}x{} image",
                p.x, p.y, intr.width, intr.height
            )));
        }
        Ok(())
    }
}

/// One calibration view: a depth image and the checkerboard corners seen by
/// the RGB camera at the same time.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub id: usize,
    pub depth: DepthImage,
    pub corners: CornerGrid,
}
