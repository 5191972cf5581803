use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{Quaternion, UnitQuaternion};

use super::{fmt_f64, read_text, write_atomic, KeyValueDoc};
use crate::error::Result;
use crate::geometry::{CameraIntrinsics, RigidTransform, Vec3};
use crate::maps::{GlobalMap, PolyFn, UndistortionMap};

pub const CALIBRATION_VERSION: u32 = 1;

/// Everything needed to correct depth frames and relate them to the RGB
/// camera.
#[derive(Debug, Clone, PartialEq)]
pub struct Calibration {
    pub intr_depth: CameraIntrinsics,
    pub intr_rgb: CameraIntrinsics,
    /// Camera-to-depth transform.
    pub extrinsic: RigidTransform,
    pub undistortion: UndistortionMap,
    pub global: GlobalMap,
}

impl Calibration {
    /// Identity maps for the given sensors.
    pub fn identity(intr_depth: CameraIntrinsics, intr_rgb: CameraIntrinsics, bin: (usize, usize), degree: usize) -> Result<Self> {
        Ok(Self {
            undistortion: UndistortionMap::identity(intr_depth.width, intr_depth.height, bin.0, bin.1, degree)?,
            global: GlobalMap::identity(intr_depth.width, intr_depth.height, degree)?,
            intr_depth,
            intr_rgb,
            extrinsic: RigidTransform::identity(),
        })
    }

    pub fn to_text(&self) -> String {
        let mut s = String::from("# depth sensor calibration\n");
        let f = |xs: &[f64]| xs.iter().map(|&x| fmt_f64(x)).collect::<Vec<_>>().join(" ");
        let _ = writeln!(s, "version {CALIBRATION_VERSION}");
        let _ = writeln!(s, "depth_intrinsics {}", intrinsics_values(&self.intr_depth));
        let _ = writeln!(s, "rgb_intrinsics {}", intrinsics_values(&self.intr_rgb));
        let t = self.extrinsic.translation();
        let _ = writeln!(s, "extrinsic_translation {}", f(&[t.x, t.y, t.z]));
        let _ = writeln!(s, "extrinsic_rotation {}", f(&self.extrinsic.wxyz()));
        let u = &self.undistortion;
        let (cols, rows) = u.grid_size();
        let _ = writeln!(s, "umap_size {} {}", u.width(), u.height());
        let _ = writeln!(s, "umap_bin {} {}", u.bin_size().0, u.bin_size().1);
        let _ = writeln!(s, "umap_degree {}", u.degree());
        let _ = writeln!(s, "umap_grid {cols} {rows}");
        for j in 0..rows {
            for i in 0..cols {
                let _ = writeln!(s, "umap_function {i} {j} {}", f(u.function(i, j).coeffs()));
            }
        }
        let g = &self.global;
        let _ = writeln!(s, "gmap_size {} {}", g.width(), g.height());
        let _ = writeln!(s, "gmap_degree {}", g.degree());
        for (k, c) in g.corners()[..3].iter().enumerate() {
            let _ = writeln!(s, "gmap_corner {k} {}", f(c.free_coeffs()));
        }
        s
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let doc = KeyValueDoc::parse(text, path);
        let version: u32 = doc.scalar("version")?;
        if version != CALIBRATION_VERSION {
            return Err(doc.error(format!("unsupported calibration version {version}")));
        }
        let intr_depth = parse_intrinsics(&doc, "depth_intrinsics")?;
        let intr_rgb = parse_intrinsics(&doc, "rgb_intrinsics")?;
        let t = doc.floats::<3>("extrinsic_translation")?;
        let extrinsic = RigidTransform::new(parse_rotation(&doc, "extrinsic_rotation")?, Vec3::from(t));

        let size = doc.get::<usize>("umap_size", 2)?;
        let bin = doc.get::<usize>("umap_bin", 2)?;
        let degree: usize = doc.scalar("umap_degree")?;
        let grid = doc.get::<usize>("umap_grid", 2)?;
        let mut undistortion = UndistortionMap::identity(size[0], size[1], bin[0], bin[1], degree)?;
        if undistortion.grid_size() != (grid[0], grid[1]) {
            return Err(doc.error(format!(
                "umap_grid {}x{} does not match size and bins ({}x{})",
                grid[0],
                grid[1],
                undistortion.grid_size().0,
                undistortion.grid_size().1
            )));
        }
        let mut seen = vec![false; grid[0] * grid[1]];
        for line in doc.all("umap_function") {
            if line.values.len() != degree + 3 {
                return Err(doc.error(format!(
                    "line {}: umap_function expects 2 indices and {} coefficients",
                    line.line,
                    degree + 1
                )));
            }
            let ij = doc.parse_all::<usize>(line, &line.values[..2])?;
            let coeffs = doc.parse_all::<f64>(line, &line.values[2..])?;
            let (i, j) = (ij[0], ij[1]);
            if i >= grid[0] || j >= grid[1] {
                return Err(doc.error(format!("line {}: control index ({i}, {j}) outside the grid", line.line)));
            }
            if std::mem::replace(&mut seen[j * grid[0] + i], true) {
                return Err(doc.error(format!("line {}: control ({i}, {j}) repeated", line.line)));
            }
            undistortion.set_function(i, j, PolyFn::new(coeffs, false)?)?;
        }
        if let Some(k) = seen.iter().position(|s| !s) {
            return Err(doc.error(format!("missing umap_function {} {}", k % grid[0], k / grid[0])));
        }

        let gsize = doc.get::<usize>("gmap_size", 2)?;
        let gdeg: usize = doc.scalar("gmap_degree")?;
        let mut corners = vec![None; 3];
        for line in doc.all("gmap_corner") {
            if line.values.len() != gdeg + 1 {
                return Err(doc.error(format!("line {}: gmap_corner expects an index and {gdeg} coefficients", line.line)));
            }
            let k: usize = doc.parse_all(line, &line.values[..1])?[0];
            let slot = corners
                .get_mut(k)
                .ok_or_else(|| doc.error(format!("line {}: corner index {k} not in 0..3", line.line)))?;
            if slot.replace(doc.parse_all::<f64>(line, &line.values[1..])?).is_some() {
                return Err(doc.error(format!("line {}: gmap_corner {k} repeated", line.line)));
            }
        }
        let mut params = Vec::with_capacity(3 * gdeg);
        for (k, c) in corners.into_iter().enumerate() {
            params.extend(c.ok_or_else(|| doc.error(format!("missing gmap_corner {k}")))?);
        }
        let global = GlobalMap::from_free_params(gsize[0], gsize[1], gdeg, &params)?;
        Ok(Self {
            intr_depth,
            intr_rgb,
            extrinsic,
            undistortion,
            global,
        })
    }
}

/// `width height fx fy cx cy k1 k2 k3 p1 p2`.
pub(crate) fn intrinsics_values(k: &CameraIntrinsics) -> String {
    let mut v = vec![k.width.to_string(), k.height.to_string()];
    v.extend(
        [k.fx, k.fy, k.cx, k.cy]
            .iter()
            .chain(&k.radial)
            .chain(&k.tangential)
            .map(|&x| fmt_f64(x)),
    );
    v.join(" ")
}

pub(crate) fn parse_intrinsics(doc: &KeyValueDoc, key: &str) -> Result<CameraIntrinsics> {
    let line = doc.one(key)?;
    if line.values.len() != 11 {
        return Err(doc.error(format!(
            "line {}: `{key}` expects width height fx fy cx cy k1 k2 k3 p1 p2",
            line.line
        )));
    }
    let size = doc.parse_all::<usize>(line, &line.values[..2])?;
    let v = doc.parse_all::<f64>(line, &line.values[2..])?;
    CameraIntrinsics::new(v[0], v[1], v[2], v[3], [v[4], v[5], v[6]], [v[7], v[8]], size[0], size[1])
}

/// Quaternion `w x y z`. A stored unit quaternion is taken verbatim so the
/// value round-trips bit for bit; anything else is normalized.
pub(crate) fn parse_rotation(doc: &KeyValueDoc, key: &str) -> Result<UnitQuaternion<f64>> {
    let q = doc.floats::<4>(key)?;
    let q = Quaternion::new(q[0], q[1], q[2], q[3]);
    let norm = q.norm();
    if !(norm > 0.0 && norm.is_finite()) {
        return Err(doc.error(format!("`{key}` is not a valid rotation")));
    }
    Ok(if (norm - 1.0).abs() < 1e-12 {
        UnitQuaternion::new_unchecked(q)
    } else {
        UnitQuaternion::from_quaternion(q)
    })
}

pub fn read_calibration(path: &Path) -> Result<Calibration> {
    Calibration::parse(&read_text(path)?, path)
}

pub fn write_calibration(path: &Path, calib: &Calibration) -> Result<()> {
    write_atomic(path, calib.to_text().as_bytes())
}
