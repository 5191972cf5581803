use std::collections::HashSet;

use super::{CameraIntrinsics, Vec3};
use crate::error::{Error, Result};

/// Row-major depth image in meters; `0.0` marks an invalid measurement.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthImage {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl DepthImage {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::DimensionMismatch {
                expected: format!("{} samples ({width}x{height})", width * height),
                got: format!("{} samples", data.len()),
            });
        }
        if let Some(bad) = data.iter().find(|d| !d.is_finite() || **d < 0.0) {
            return Err(Error::InvalidInput(format!("depth value {bad} is not a finite non-negative number")));
        }
        Ok(Self { width, height, data })
    }

    /// All pixels invalid.
    pub fn empty(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![0.0; width * height],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, u: usize, v: usize) -> f64 {
        self.data[v * self.width + u]
    }

    /// Number of valid (non-zero) pixels.
    pub fn valid_count(&self) -> usize {
        self.data.iter().filter(|d| **d > 0.0).count()
    }
}

/// Point grid preserving the row/column structure of its depth image.
#[derive(Debug, Clone, PartialEq)]
pub struct OrganizedCloud {
    width: usize,
    height: usize,
    points: Vec<Option<Vec3>>,
}

impl OrganizedCloud {
    pub fn new(width: usize, height: usize, points: Vec<Option<Vec3>>) -> Result<Self> {
        if points.len() != width * height {
            return Err(Error::DimensionMismatch {
                expected: format!("{} points", width * height),
                got: format!("{} points", points.len()),
            });
        }
        Ok(Self { width, height, points })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn points(&self) -> &[Option<Vec3>] {
        &self.points
    }

    #[inline]
    pub fn get(&self, u: usize, v: usize) -> Option<&Vec3> {
        self.points[v * self.width + u].as_ref()
    }

    /// Iterates `(u, v, point)` over valid points.
    pub fn iter_valid(&self) -> impl Iterator<Item = (usize, usize, &Vec3)> + '_ {
        let w = self.width;
        self.points
            .iter()
            .enumerate()
            .filter_map(move |(i, p)| p.as_ref().map(|p| (i % w, i / w, p)))
    }

    /// Depth image holding the z component of every valid point.
    pub fn to_depth_image(&self) -> DepthImage {
        DepthImage {
            width: self.width,
            height: self.height,
            data: self.points.iter().map(|p| p.map_or(0.0, |p| p.z)).collect(),
        }
    }
}

/// Set of distinct in-bounds pixel coordinates `(u, v)`.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct IndexSet {
    pixels: Vec<(usize, usize)>,
}

impl IndexSet {
    pub fn new(pixels: Vec<(usize, usize)>, width: usize, height: usize) -> Result<Self> {
        let mut seen = HashSet::with_capacity(pixels.len());
        for &(u, v) in &pixels {
            if u >= width || v >= height {
                return Err(Error::OutOfBounds { u, v, width, height });
            }
            if !seen.insert((u, v)) {
                return Err(Error::InvalidInput(format!("duplicate pixel ({u}, {v}) in index set")));
            }
        }
        Ok(Self { pixels })
    }

    /// Caller guarantees uniqueness and bounds (e.g. pixels produced by a
    /// single raster scan).
    pub(crate) fn from_unique(pixels: Vec<(usize, usize)>) -> Self {
        Self { pixels }
    }

    pub fn len(&self) -> usize {
        self.pixels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }

    pub fn pixels(&self) -> &[(usize, usize)] {
        &self.pixels
    }

    pub fn iter(&self) -> impl Iterator<Item = &(usize, usize)> {
        self.pixels.iter()
    }

    /// Mean pixel coordinate.
    pub fn centroid(&self) -> Option<(f64, f64)> {
        if self.pixels.is_empty() {
            return None;
        }
        let n = self.pixels.len() as f64;
        let (su, sv) = self
            .pixels
            .iter()
            .fold((0.0, 0.0), |(a, b), &(u, v)| (a + u as f64, b + v as f64));
        Some((su / n, sv / n))
    }
}

/// Back-projects every valid depth with the ideal pinhole model.
pub fn depth_to_cloud(img: &DepthImage, intr: &CameraIntrinsics) -> Result<OrganizedCloud> {
    check_dims(img.width, img.height, intr)?;
    let points = img
        .data
        .iter()
        .enumerate()
        .map(|(i, &d)| {
            (d > 0.0).then(|| {
                let (u, v) = ((i % img.width) as f64, (i / img.width) as f64);
                Vec3::new(d * (u - intr.cx) / intr.fx, d * (v - intr.cy) / intr.fy, d)
            })
        })
        .collect();
    Ok(OrganizedCloud {
        width: img.width,
        height: img.height,
        points,
    })
}

pub(crate) fn check_dims(width: usize, height: usize, intr: &CameraIntrinsics) -> Result<()> {
    if width != intr.width || height != intr.height {
        return Err(Error::DimensionMismatch {
            expected: format!("{}x{} (intrinsics)", intr.width, intr.height),
            got: format!("{width}x{height}"),
        });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn intr() -> CameraIntrinsics {
        CameraIntrinsics::pinhole(100.0, 110.0, 4.0, 3.0, 8, 6).unwrap()
    }

    #[test]
    fn back_projection_examples() {
        let k = intr();
        let mut data = vec![0.0; 48];
        data[3 * 8 + 4] = 2.0; // principal point
        let cloud = depth_to_cloud(&DepthImage::new(8, 6, data.clone()).unwrap(), &k).unwrap();
        assert_eq!(cloud.get(4, 3), Some(&Vec3::new(0.0, 0.0, 2.0)));
        assert_eq!(cloud.get(0, 0), None);

        let k = CameraIntrinsics::pinhole(2.0, 2.0, 1.0, 1.0, 4, 4).unwrap();
        let mut data = vec![0.0; 16];
        data[4 + 3] = 3.0; // u = cx + fx
        let cloud = depth_to_cloud(&DepthImage::new(4, 4, data).unwrap(), &k).unwrap();
        assert_eq!(cloud.get(3, 1), Some(&Vec3::new(3.0, 0.0, 3.0)));
    }

    #[test]
    fn dimension_mismatch_is_error() {
        let img = DepthImage::empty(4, 4);
        assert!(matches!(depth_to_cloud(&img, &intr()), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn invalid_depth_values_rejected() {
        assert!(DepthImage::new(2, 1, vec![1.0, -1.0]).is_err());
        assert!(DepthImage::new(2, 1, vec![1.0, f64::NAN]).is_err());
        assert!(DepthImage::new(2, 1, vec![1.0]).is_err());
    }

    #[test]
    fn index_set_rejects_duplicates_and_out_of_bounds() {
        assert!(IndexSet::new(vec![(0, 0), (1, 1)], 2, 2).is_ok());
        assert!(IndexSet::new(vec![(0, 0), (0, 0)], 2, 2).is_err());
        assert!(matches!(IndexSet::new(vec![(2, 0)], 2, 2), Err(Error::OutOfBounds { .. })));
    }

    proptest! {
        #[test]
        fn z_round_trips_exactly(data in prop::collection::vec(prop_oneof![Just(0.0), 0.3f64..6.0], 48)) {
            let img = DepthImage::new(8, 6, data).unwrap();
            let cloud = depth_to_cloud(&img, &intr()).unwrap();
            prop_assert_eq!(cloud.to_depth_image(), img);
        }
    }
}
