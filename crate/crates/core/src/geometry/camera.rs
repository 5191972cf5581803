use super::{Vec2, Vec3};
use crate::error::{Error, Result};

/// Pinhole intrinsics with OpenCV-style radial (k1, k2, k3) and tangential
/// (p1, p2) distortion.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub radial: [f64; 3],
    pub tangential: [f64; 2],
    pub width: usize,
    pub height: usize,
}

impl CameraIntrinsics {
    pub fn new(
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        radial: [f64; 3],
        tangential: [f64; 2],
        width: usize,
        height: usize,
    ) -> Result<Self> {
        let k = Self {
            fx,
            fy,
            cx,
            cy,
            radial,
            tangential,
            width,
            height,
        };
        k.validate()?;
        Ok(k)
    }

    /// Distortion-free intrinsics.
    pub fn pinhole(fx: f64, fy: f64, cx: f64, cy: f64, width: usize, height: usize) -> Result<Self> {
        Self::new(fx, fy, cx, cy, [0.0; 3], [0.0; 2], width, height)
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.fx, self.fy, self.cx, self.cy]
            .iter()
            .chain(self.radial.iter())
            .chain(self.tangential.iter())
            .all(|v| v.is_finite());
        if !finite {
            return Err(Error::InvalidInput("non-finite intrinsics".into()));
        }
        if self.fx <= 0.0 || self.fy <= 0.0 {
            return Err(Error::InvalidInput(format!(
                "focal lengths must be positive (fx = {}, fy = {})",
                self.fx, self.fy
            )));
        }
        if !(0.0..self.width as f64).contains(&self.cx) || !(0.0..self.height as f64).contains(&self.cy) {
            return Err(Error::InvalidInput(format!(
                "principal point ({}, {}) outside {}x{} image",
                self.cx, self.cy, self.width, self.height
            )));
        }
        Ok(())
    }

    pub fn has_distortion(&self) -> bool {
        self.radial.iter().chain(self.tangential.iter()).any(|&c| c != 0.0)
    }

    /// Applies lens distortion to normalized image coordinates.
    pub fn distort_normalized(&self, x: f64, y: f64) -> (f64, f64) {
        let [k1, k2, k3] = self.radial;
        let [p1, p2] = self.tangential;
        let r2 = x * x + y * y;
        let radial = 1.0 + r2 * (k1 + r2 * (k2 + r2 * k3));
        let xd = x * radial + 2.0 * p1 * x * y + p2 * (r2 + 2.0 * x * x);
        let yd = y * radial + p1 * (r2 + 2.0 * y * y) + 2.0 * p2 * x * y;
        (xd, yd)
    }

    /// Inverts [`Self::distort_normalized`] by fixed-point iteration.
    pub fn undistort_normalized(&self, xd: f64, yd: f64) -> (f64, f64) {
        if !self.has_distortion() {
            return (xd, yd);
        }
        let (mut x, mut y) = (xd, yd);
        for _ in 0..50 {
            let (ex, ey) = self.distort_normalized(x, y);
            let (dx, dy) = (xd - ex, yd - ey);
            x += dx;
            y += dy;
            if dx.abs() < 1e-15 && dy.abs() < 1e-15 {
                break;
            }
        }
        (x, y)
    }

    /// Projects a camera-frame point to pixel coordinates.
    pub fn project_point(&self, p: &Vec3) -> Result<Vec2> {
        if !(p.z > 0.0) {
            return Err(Error::BehindCamera(p.z));
        }
        let (xd, yd) = self.distort_normalized(p.x / p.z, p.y / p.z);
        Ok(Vec2::new(self.fx * xd + self.cx, self.fy * yd + self.cy))
    }

    /// Normalized, undistorted coordinates of a pixel.
    pub fn pixel_to_normalized(&self, pixel: &Vec2) -> Vec2 {
        let xd = (pixel.x - self.cx) / self.fx;
        let yd = (pixel.y - self.cy) / self.fy;
        let (x, y) = self.undistort_normalized(xd, yd);
        Vec2::new(x, y)
    }

    /// Ideal pinhole ray `((u - cx)/fx, (v - cy)/fy, 1)`.
    #[inline]
    pub fn pinhole_ray(&self, u: f64, v: f64) -> Vec3 {
        Vec3::new((u - self.cx) / self.fx, (v - self.cy) / self.fy, 1.0)
    }
}
