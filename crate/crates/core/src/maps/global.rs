use super::PolyFn;
use crate::error::{Error, Result};

/// `gWH = gW0 + g0H - g00`, coefficient-wise.
pub fn complete_dependent_corner(g00: &PolyFn, gw0: &PolyFn, g0h: &PolyFn) -> Result<PolyFn> {
    let k = g00.degree();
    if gw0.degree() != k || g0h.degree() != k {
        return Err(Error::InvalidInput(format!(
            "corner degrees differ ({}, {}, {})",
            k,
            gw0.degree(),
            g0h.degree()
        )));
    }
    if !(g00.constant_zero() && gw0.constant_zero() && g0h.constant_zero()) {
        return Err(Error::InvalidInput("global corner functions must have a zero constant term".into()));
    }
    let coeffs = (0..=k)
        .map(|i| gw0.coeffs()[i] + g0h.coeffs()[i] - g00.coeffs()[i])
        .collect();
    PolyFn::new(coeffs, true)
}

/// Global correction map: correction functions at the four image corners
/// `(0,0), (W,0), (0,H), (W,H)`, blended bilinearly over the whole image.
///
/// Only three corners are free. The fourth is always rebuilt from them so
/// that the blend stays affine in the pixel coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct GlobalMap {
    width: usize,
    height: usize,
    g00: PolyFn,
    gw0: PolyFn,
    g0h: PolyFn,
    gwh: PolyFn,
}

impl GlobalMap {
    pub fn new(width: usize, height: usize, g00: PolyFn, gw0: PolyFn, g0h: PolyFn) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidInput(format!("global map size {width}x{height}")));
        }
        let gwh = complete_dependent_corner(&g00, &gw0, &g0h)?;
        Ok(Self {
            width,
            height,
            g00,
            gw0,
            g0h,
            gwh,
        })
    }

    pub fn identity(width: usize, height: usize, degree: usize) -> Result<Self> {
        let id = PolyFn::identity(degree, true);
        Self::new(width, height, id.clone(), id.clone(), id)
    }

    /// Builds the map from the free coefficients of the three free corners,
    /// `degree` values per corner in the order (0,0), (W,0), (0,H).
    pub fn from_free_params(width: usize, height: usize, degree: usize, params: &[f64]) -> Result<Self> {
        if params.len() != 3 * degree {
            return Err(Error::DimensionMismatch {
                expected: format!("{} global parameters", 3 * degree),
                got: format!("{}", params.len()),
            });
        }
        let corner = |k: usize| {
            let mut c = Vec::with_capacity(degree + 1);
            c.push(0.0);
            c.extend_from_slice(&params[k * degree..(k + 1) * degree]);
            PolyFn::new(c, true)
        };
        Self::new(width, height, corner(0)?, corner(1)?, corner(2)?)
    }

    /// Free coefficients in the layout accepted by [`Self::from_free_params`].
    pub fn free_params(&self) -> Vec<f64> {
        [&self.g00, &self.gw0, &self.g0h]
            .iter()
            .flat_map(|f| f.free_coeffs().iter().copied())
            .collect()
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn degree(&self) -> usize {
        self.g00.degree()
    }

    /// Corner functions in the order (0,0), (W,0), (0,H), (W,H).
    pub fn corners(&self) -> [&PolyFn; 4] {
        [&self.g00, &self.gw0, &self.g0h, &self.gwh]
    }

    /// Bilinear weights of the four corners at pixel `(u, v)`, same order as
    /// [`Self::corners`].
    #[inline]
    pub fn weights(&self, u: f64, v: f64) -> [f64; 4] {
        Self::corner_weights(u / self.width as f64, v / self.height as f64)
    }

    /// Corner weights at normalized coordinates `x = u / W`, `y = v / H`.
    #[inline]
    pub fn corner_weights(x: f64, y: f64) -> [f64; 4] {
        [(1.0 - x) * (1.0 - y), x * (1.0 - y), (1.0 - x) * y, x * y]
    }

    /// Corrected depth at pixel `(u, v)`; invalid depths (`<= 0`) stay `0`.
    #[inline]
    pub fn eval(&self, u: f64, v: f64, d: f64) -> f64 {
        if !(d > 0.0) {
            return 0.0;
        }
        let w = self.weights(u, v);
        self.corners().iter().zip(w).map(|(f, w)| w * f.eval(d)).sum()
    }
}

/// Free-function form of [`GlobalMap::eval`] for integer pixels.
pub fn global_eval(g: &GlobalMap, u: usize, v: usize, d: f64) -> f64 {
    g.eval(u as f64, v as f64, d)
}
