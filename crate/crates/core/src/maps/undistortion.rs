use super::{bilinear_stencil, PolyFn, MAX_DEGREE};
use crate::error::{Error, Result};

/// One control pixel of a bilinear stencil.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControlWeight {
    /// Control grid indices.
    pub i: usize,
    pub j: usize,
    /// Control pixel coordinates `(i * bin_x, j * bin_y)`.
    pub s: usize,
    pub t: usize,
    pub weight: f64,
}

/// Binned undistortion map: polynomial correction functions at control pixels
/// `(i * bin_x, j * bin_y)`, blended bilinearly everywhere else.
///
/// The control grid has `ceil(width / bin_x) + 1` columns and
/// `ceil(height / bin_y) + 1` rows so every image pixel has a full stencil.
#[derive(Debug, Clone, PartialEq)]
pub struct UndistortionMap {
    width: usize,
    height: usize,
    bin_x: usize,
    bin_y: usize,
    cols: usize,
    rows: usize,
    degree: usize,
    functions: Vec<PolyFn>,
}

impl UndistortionMap {
    pub fn identity(width: usize, height: usize, bin_x: usize, bin_y: usize, degree: usize) -> Result<Self> {
        let (cols, rows) = Self::grid_dims(width, height, bin_x, bin_y)?;
        if !(1..=MAX_DEGREE).contains(&degree) {
            return Err(Error::InvalidInput(format!("degree {degree} out of range 1..={MAX_DEGREE}")));
        }
        Ok(Self {
            width,
            height,
            bin_x,
            bin_y,
            cols,
            rows,
            degree,
            functions: vec![PolyFn::identity(degree, false); cols * rows],
        })
    }

    /// Builds a map from row-major control functions.
    pub fn from_functions(
        width: usize,
        height: usize,
        bin_x: usize,
        bin_y: usize,
        degree: usize,
        functions: Vec<PolyFn>,
    ) -> Result<Self> {
        let mut map = Self::identity(width, height, bin_x, bin_y, degree)?;
        if functions.len() != map.functions.len() {
            return Err(Error::DimensionMismatch {
                expected: format!("{} control functions ({}x{})", map.functions.len(), map.cols, map.rows),
                got: format!("{} control functions", functions.len()),
            });
        }
        if let Some(f) = functions.iter().find(|f| f.degree() != degree) {
            return Err(Error::InvalidInput(format!(
                "control function of degree {} in a degree-{degree} map",
                f.degree()
            )));
        }
        map.functions = functions;
        Ok(map)
    }

    fn grid_dims(width: usize, height: usize, bin_x: usize, bin_y: usize) -> Result<(usize, usize)> {
        if width == 0 || height == 0 || bin_x == 0 || bin_y == 0 {
            return Err(Error::InvalidInput(format!(
                "map dimensions must be positive ({width}x{height}, bins {bin_x}x{bin_y})"
            )));
        }
        Ok((width.div_ceil(bin_x) + 1, height.div_ceil(bin_y) + 1))
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn bin_size(&self) -> (usize, usize) {
        (self.bin_x, self.bin_y)
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    /// `(columns, rows)` of the control grid.
    pub fn grid_size(&self) -> (usize, usize) {
        (self.cols, self.rows)
    }

    /// Control functions, row-major over the control grid.
    pub fn functions(&self) -> &[PolyFn] {
        &self.functions
    }

    pub fn function(&self, i: usize, j: usize) -> &PolyFn {
        &self.functions[j * self.cols + i]
    }

    pub fn set_function(&mut self, i: usize, j: usize, f: PolyFn) -> Result<()> {
        if i >= self.cols || j >= self.rows {
            return Err(Error::OutOfBounds {
                u: i,
                v: j,
                width: self.cols,
                height: self.rows,
            });
        }
        if f.degree() != self.degree {
            return Err(Error::InvalidInput(format!(
                "function degree {} differs from map degree {}",
                f.degree(),
                self.degree
            )));
        }
        self.functions[j * self.cols + i] = f;
        Ok(())
    }

    /// The four control pixels surrounding `(u, v)` with their bilinear
    /// weights (summing to one).
    pub fn surrounding(&self, u: usize, v: usize) -> Result<[ControlWeight; 4]> {
        self.check_pixel(u, v)?;
        Ok(bilinear_stencil(u, v, self.bin_x, self.bin_y).map(|(i, j, weight)| ControlWeight {
            i,
            j,
            s: i * self.bin_x,
            t: j * self.bin_y,
            weight,
        }))
    }

    fn check_pixel(&self, u: usize, v: usize) -> Result<()> {
        if u >= self.width || v >= self.height {
            return Err(Error::OutOfBounds {
                u,
                v,
                width: self.width,
                height: self.height,
            });
        }
        Ok(())
    }

    /// Corrected depth at `(u, v)`; invalid depths (`<= 0`) stay `0`.
    /// The pixel must be inside the image.
    #[inline]
    pub fn undistort_depth(&self, u: usize, v: usize, d: f64) -> f64 {
        if !(d > 0.0) {
            return 0.0;
        }
        bilinear_stencil(u, v, self.bin_x, self.bin_y)
            .iter()
            .map(|&(i, j, w)| w * self.functions[j * self.cols + i].eval(d))
            .sum()
    }

    /// Checked variant of [`Self::undistort_depth`].
    pub fn try_undistort_depth(&self, u: usize, v: usize, d: f64) -> Result<f64> {
        self.check_pixel(u, v)?;
        Ok(self.undistort_depth(u, v, d))
    }
}
