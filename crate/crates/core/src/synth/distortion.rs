use crate::error::{Error, Result};
use crate::geometry::{fit_plane, CameraIntrinsics, NoiseModel, Vec3};
use crate::maps::{bilinear_stencil, PolyFn};

/// Depth range on which the forward distortion must be monotone.
pub const MONOTONE_RANGE: (f64, f64) = NoiseModel::WORKING_RANGE;

/// Known depth distortion used by the synthetic sensor.
///
/// The forward distortion is a quadratic in the true depth whose coefficients
/// live on a control grid and are blended bilinearly, so at every pixel
/// `D(d) = a + b d + c d^2`. The global bias is given as the correction that
/// maps a distorted depth back to the true one (`true = s x + q x^2`). The
/// sensor reports its inverse applied to the distorted depth.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruthDistortion {
    width: usize,
    height: usize,
    bin_x: usize,
    bin_y: usize,
    cols: usize,
    /// Forward coefficients `[a, b, c]` per control pixel, row-major.
    coeffs: Vec<[f64; 3]>,
    /// Bias correction `[s, q]`: `true = s x + q x^2`.
    bias: [f64; 2],
    pub description: String,
}

impl GroundTruthDistortion {
    /// Builds a field from a function of the control pixel coordinates.
    pub fn from_fn(
        width: usize,
        height: usize,
        bin_x: usize,
        bin_y: usize,
        f: impl Fn(f64, f64) -> [f64; 3],
    ) -> Result<Self> {
        if width == 0 || height == 0 || bin_x == 0 || bin_y == 0 {
            return Err(Error::InvalidInput("distortion grid dimensions must be positive".into()));
        }
        let cols = width.div_ceil(bin_x) + 1;
        let rows = height.div_ceil(bin_y) + 1;
        let coeffs = (0..rows)
            .flat_map(|j| (0..cols).map(move |i| (i, j)))
            .map(|(i, j)| f((i * bin_x) as f64, (j * bin_y) as f64))
            .collect();
        let field = Self {
            width,
            height,
            bin_x,
            bin_y,
            cols,
            coeffs,
            bias: [1.0, 0.0],
            description: String::from("custom"),
        };
        field.check_monotone()?;
        Ok(field)
    }

    pub fn identity(width: usize, height: usize) -> Self {
        Self::from_fn(width, height, width, height, |_, _| [0.0, 1.0, 0.0])
            .expect("identity field is valid")
            .described("identity")
    }

    /// Radial bowl: `D(d) = d + k rho^2 d^2` with `rho = 1` at the image
    /// corners, scaled so that corner pixels are pushed back by `peak` at
    /// depth `at`.
    pub fn bowl(width: usize, height: usize, bin: usize, peak: f64, at: f64) -> Result<Self> {
        Self::bowl_with_tilt(width, height, bin, peak, at, 0.0, 0.0)
    }

    /// Bowl plus a linear-in-depth tilt: the depth slope varies by
    /// `tilt_x` (resp. `tilt_y`) between the image center and its right
    /// (resp. bottom) border.
    pub fn bowl_with_tilt(
        width: usize,
        height: usize,
        bin: usize,
        peak: f64,
        at: f64,
        tilt_x: f64,
        tilt_y: f64,
    ) -> Result<Self> {
        if !(at > 0.0) {
            return Err(Error::InvalidInput(format!("reference depth must be positive, got {at}")));
        }
        let (cx, cy) = ((width as f64 - 1.0) / 2.0, (height as f64 - 1.0) / 2.0);
        let r2 = cx * cx + cy * cy;
        let k = peak / (at * at);
        Ok(Self::from_fn(width, height, bin, bin, |s, t| {
            let rho2 = ((s - cx).powi(2) + (t - cy).powi(2)) / r2;
            [0.0, 1.0 + tilt_x * (s - cx) / cx + tilt_y * (t - cy) / cy, k * rho2]
        })?
        .described(&format!("bowl {peak} m at {at} m, tilt ({tilt_x}, {tilt_y})")))
    }

    pub fn described(mut self, d: &str) -> Self {
        self.description = d.to_string();
        self
    }

    /// Sets the bias correction `true = slope x + quad x^2`.
    pub fn with_bias(mut self, slope: f64, quad: f64) -> Result<Self> {
        let (lo, hi) = MONOTONE_RANGE;
        // Derivative of the correction must stay positive on the range.
        if !(slope + 2.0 * quad * lo > 0.0 && slope + 2.0 * quad * hi > 0.0) {
            return Err(Error::InvalidInput(format!("bias ({slope}, {quad}) is not monotone")));
        }
        self.bias = [slope, quad];
        Ok(self)
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

    pub fn control_coeffs(&self) -> &[[f64; 3]] {
        &self.coeffs
    }

    pub fn bias(&self) -> [f64; 2] {
        self.bias
    }

    /// The bias correction as a polynomial.
    pub fn bias_correction(&self) -> PolyFn {
        PolyFn::new(vec![0.0, self.bias[0], self.bias[1]], true).expect("finite coefficients")
    }

    fn check_monotone(&self) -> Result<()> {
        let (lo, hi) = MONOTONE_RANGE;
        for c in &self.coeffs {
            if !c.iter().all(|v| v.is_finite()) || !(c[1] + 2.0 * c[2] * lo > 0.0 && c[1] + 2.0 * c[2] * hi > 0.0) {
                return Err(Error::InvalidInput(format!("distortion {c:?} is not monotone on {lo}..{hi} m")));
            }
        }
        Ok(())
    }

    /// Forward coefficients at a pixel.
    pub fn coeffs_at(&self, u: usize, v: usize) -> [f64; 3] {
        let mut out = [0.0; 3];
        for (i, j, w) in bilinear_stencil(u, v, self.bin_x, self.bin_y) {
            let c = &self.coeffs[j * self.cols + i];
            for k in 0..3 {
                out[k] += w * c[k];
            }
        }
        out
    }

    /// Distorted depth `D(u, v; d)` before the global bias.
    pub fn distort(&self, u: usize, v: usize, d: f64) -> f64 {
        let [a, b, c] = self.coeffs_at(u, v);
        a + d * (b + c * d)
    }

    /// `D(u, v; d) - d`.
    pub fn field_value(&self, u: usize, v: usize, d: f64) -> f64 {
        self.distort(u, v, d) - d
    }

    /// Reported depth for a distorted depth `x`: the inverse of the bias
    /// correction.
    pub fn apply_bias(&self, x: f64) -> f64 {
        let [s, q] = self.bias;
        if q == 0.0 {
            return x / s;
        }
        // Stable root of q y^2 + s y - x = 0.
        2.0 * x / (s + (s * s + 4.0 * q * x).sqrt())
    }

    /// Noise-free reported depth for true depth `d`.
    pub fn observe(&self, u: usize, v: usize, d: f64) -> f64 {
        self.apply_bias(self.distort(u, v, d))
    }

    /// RMS distance to the best-fit plane of a fronto-parallel wall at `depth`
    /// seen through the distortion (bias excluded), over the whole image.
    pub fn planarity_rms(&self, intr: &CameraIntrinsics, depth: f64) -> Result<f64> {
        let pts: Vec<Vec3> = (0..self.height)
            .flat_map(|v| (0..self.width).map(move |u| (u, v)))
            .map(|(u, v)| intr.pinhole_ray(u as f64, v as f64) * self.distort(u, v, depth))
            .collect();
        let plane = fit_plane(&pts, None)?;
        Ok((pts.iter().map(|p| plane.signed_distance(p).powi(2)).sum::<f64>() / pts.len() as f64).sqrt())
    }
}
