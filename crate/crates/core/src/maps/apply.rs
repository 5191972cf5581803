use rayon::prelude::*;

use super::{GlobalMap, UndistortionMap};
use crate::error::{Error, Result};
use crate::geometry::{check_dims, CameraIntrinsics, DepthImage, OrganizedCloud, Vec3};

fn check_map_dims(what: &str, mw: usize, mh: usize, w: usize, h: usize) -> Result<()> {
    if (mw, mh) != (w, h) {
        return Err(Error::DimensionMismatch {
            expected: format!("{mw}x{mh} ({what})"),
            got: format!("{w}x{h}"),
        });
    }
    Ok(())
}

/// Keeps a corrected depth only if it is a valid positive depth.
#[inline]
fn valid_or_zero(d: f64) -> f64 {
    if d > 0.0 && d.is_finite() {
        d
    } else {
        0.0
    }
}

/// Scales a point along its line of sight so that its depth becomes `z_new`.
#[inline]
fn rescale(p: &Vec3, z_new: f64) -> Option<Vec3> {
    let z_new = valid_or_zero(z_new);
    (z_new > 0.0).then(|| p * (z_new / p.z))
}

pub fn apply_undistortion_image(map: &UndistortionMap, img: &DepthImage) -> Result<DepthImage> {
    check_map_dims("undistortion map", map.width(), map.height(), img.width(), img.height())?;
    let w = img.width();
    let data = img
        .data()
        .iter()
        .enumerate()
        .map(|(i, &d)| valid_or_zero(map.undistort_depth(i % w, i / w, d)))
        .collect();
    DepthImage::new(w, img.height(), data)
}

pub fn apply_undistortion_cloud(map: &UndistortionMap, cloud: &OrganizedCloud) -> Result<OrganizedCloud> {
    check_map_dims("undistortion map", map.width(), map.height(), cloud.width(), cloud.height())?;
    let w = cloud.width();
    let points = cloud
        .points()
        .iter()
        .enumerate()
        .map(|(i, p)| p.and_then(|p| rescale(&p, map.undistort_depth(i % w, i / w, p.z))))
        .collect();
    OrganizedCloud::new(w, cloud.height(), points)
}

pub fn apply_global_cloud(map: &GlobalMap, cloud: &OrganizedCloud) -> Result<OrganizedCloud> {
    check_map_dims("global map", map.width(), map.height(), cloud.width(), cloud.height())?;
    let w = cloud.width();
    let points = cloud
        .points()
        .iter()
        .enumerate()
        .map(|(i, p)| p.and_then(|p| rescale(&p, map.eval((i % w) as f64, (i / w) as f64, p.z))))
        .collect();
    OrganizedCloud::new(w, cloud.height(), points)
}

/// Undistortion followed by global correction, back-projected with `intr`.
pub fn apply_full_correction(
    u_map: &UndistortionMap,
    g_map: &GlobalMap,
    img: &DepthImage,
    intr: &CameraIntrinsics,
) -> Result<OrganizedCloud> {
    Corrector::new(u_map.clone(), g_map.clone(), *intr, 1)?.correct_cloud(img)
}

/// Reusable correction stage holding both maps and an optional worker pool.
///
/// Every pixel is computed independently with the same arithmetic, so the
/// output does not depend on the thread count.
pub struct Corrector {
    u_map: UndistortionMap,
    g_map: GlobalMap,
    intr: CameraIntrinsics,
    pool: Option<rayon::ThreadPool>,
}

impl Corrector {
    /// `threads <= 1` runs on the calling thread.
    pub fn new(u_map: UndistortionMap, g_map: GlobalMap, intr: CameraIntrinsics, threads: usize) -> Result<Self> {
        check_dims(u_map.width(), u_map.height(), &intr)?;
        check_map_dims("global map", g_map.width(), g_map.height(), intr.width, intr.height)?;
        let pool = if threads > 1 {
            Some(
                rayon::ThreadPoolBuilder::new()
                    .num_threads(threads)
                    .build()
                    .map_err(|e| Error::InvalidInput(format!("cannot start worker pool: {e}")))?,
            )
        } else {
            None
        };
        Ok(Self {
            u_map,
            g_map,
            intr,
            pool,
        })
    }

    pub fn threads(&self) -> usize {
        self.pool.as_ref().map_or(1, |p| p.current_num_threads())
    }

    pub fn undistortion_map(&self) -> &UndistortionMap {
        &self.u_map
    }

    pub fn global_map(&self) -> &GlobalMap {
        &self.g_map
    }

    pub fn intrinsics(&self) -> &CameraIntrinsics {
        &self.intr
    }

    #[inline]
    fn correct_row(&self, v: usize, src: &[f64], dst: &mut [f64]) {
        let vf = v as f64;
        for (u, (o, &d)) in dst.iter_mut().zip(src).enumerate() {
            *o = if d > 0.0 {
                let du = self.u_map.undistort_depth(u, v, d);
                valid_or_zero(self.g_map.eval(u as f64, vf, valid_or_zero(du)))
            } else {
                0.0
            };
        }
    }

    fn run_rows<T: Send, F>(&self, out: &mut [T], width: usize, f: F)
    where
        F: Fn(usize, &mut [T]) + Sync + Send,
    {
        match &self.pool {
            Some(pool) => pool.install(|| out.par_chunks_mut(width).enumerate().for_each(|(v, row)| f(v, row))),
            None => out.chunks_mut(width).enumerate().for_each(|(v, row)| f(v, row)),
        }
    }

    /// Corrected depth image `d* = g(u(d))`.
    pub fn correct_depth(&self, img: &DepthImage) -> Result<DepthImage> {
        check_dims(img.width(), img.height(), &self.intr)?;
        let w = img.width();
        let src = img.data();
        let mut out = vec![0.0; src.len()];
        self.run_rows(&mut out, w, |v, row| self.correct_row(v, &src[v * w..(v + 1) * w], row));
        DepthImage::new(w, img.height(), out)
    }

    /// Corrected cloud, back-projected with the depth intrinsics.
    pub fn correct_cloud(&self, img: &DepthImage) -> Result<OrganizedCloud> {
        check_dims(img.width(), img.height(), &self.intr)?;
        let w = img.width();
        let src = img.data();
        let intr = &self.intr;
        let mut out: Vec<Option<Vec3>> = vec![None; src.len()];
        self.run_rows(&mut out, w, |v, row| {
            let mut depth = vec![0.0; w];
            self.correct_row(v, &src[v * w..(v + 1) * w], &mut depth);
            let y = (v as f64 - intr.cy) / intr.fy;
            for (u, (o, &d)) in row.iter_mut().zip(&depth).enumerate() {
                *o = (d > 0.0).then(|| Vec3::new(d * (u as f64 - intr.cx) / intr.fx, d * y, d));
            }
        });
        OrganizedCloud::new(w, img.height(), out)
    }
}
