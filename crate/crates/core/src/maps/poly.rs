use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::geometry::NoiseModel;

pub const MAX_DEGREE: usize = 4;

/// Polynomial correction `z -> a0 + a1 z + ... + ak z^k` (meters to meters).
#[derive(Debug, Clone, PartialEq)]
pub struct PolyFn {
    coeffs: Vec<f64>,
    constant_zero: bool,
}

impl PolyFn {
    pub fn new(coeffs: Vec<f64>, constant_zero: bool) -> Result<Self> {
        if coeffs.is_empty() || coeffs.len() > MAX_DEGREE + 1 {
            return Err(Error::InvalidInput(format!(
                "polynomial needs 1..={} coefficients, got {}",
                MAX_DEGREE + 1,
                coeffs.len()
            )));
        }
        if coeffs.iter().any(|c| !c.is_finite()) {
            return Err(Error::InvalidInput("non-finite polynomial coefficient".into()));
        }
        if constant_zero && coeffs[0] != 0.0 {
            return Err(Error::InvalidInput(format!(
                "constant term must be zero, got {}",
                coeffs[0]
            )));
        }
        Ok(Self { coeffs, constant_zero })
    }

    /// `z -> z` as a polynomial of the given degree.
    pub fn identity(degree: usize, constant_zero: bool) -> Self {
        assert!((1..=MAX_DEGREE).contains(&degree), "degree {degree} out of range");
        let mut coeffs = vec![0.0; degree + 1];
        coeffs[1] = 1.0;
        Self { coeffs, constant_zero }
    }

    pub fn degree(&self) -> usize {
        self.coeffs.len() - 1
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn constant_zero(&self) -> bool {
        self.constant_zero
    }

    #[inline]
    pub fn eval(&self, z: f64) -> f64 {
        self.coeffs.iter().rev().fold(0.0, |acc, c| acc * z + c)
    }

    /// Free coefficients (all of them, or all but the constant when it is
    /// pinned to zero).
    pub fn free_coeffs(&self) -> &[f64] {
        if self.constant_zero {
            &self.coeffs[1..]
        } else {
            &self.coeffs
        }
    }
}

/// Samples `(z, z_target)` collected for one control pixel.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SampleSet {
    samples: Vec<(f64, f64)>,
}

impl SampleSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, z: f64, z_target: f64) -> Result<()> {
        if !(z > 0.0 && z.is_finite() && z_target.is_finite()) {
            return Err(Error::InvalidInput(format!("invalid sample ({z}, {z_target})")));
        }
        self.samples.push((z, z_target));
        Ok(())
    }

    pub fn samples(&self) -> &[(f64, f64)] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// Weighted least-squares polynomial fit minimizing
/// `sum (f(z) - z_target)^2 / sigma(z)^2`.
///
/// The problem is linear in the coefficients and solved through the weighted
/// normal equations (with the depth axis rescaled for conditioning).
pub fn fit_weighted_poly(samples: &SampleSet, nm: &NoiseModel, degree: usize, constant_zero: bool) -> Result<PolyFn> {
    if !(1..=MAX_DEGREE).contains(&degree) {
        return Err(Error::InvalidInput(format!("degree {degree} out of range 1..={MAX_DEGREE}")));
    }
    let first = usize::from(constant_zero);
    let unknowns = degree + 1 - first;
    let mut distinct: Vec<f64> = samples.samples.iter().map(|s| s.0).collect();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    if distinct.len() < unknowns {
        return Err(Error::NotEnoughData {
            what: "distinct sample depths",
            needed: unknowns,
            got: distinct.len(),
        });
    }
    let scale = *distinct.last().unwrap();

    let mut ata = DMatrix::<f64>::zeros(unknowns, unknowns);
    let mut atb = DVector::<f64>::zeros(unknowns);
    let mut phi = vec![0.0; unknowns];
    for &(z, target) in &samples.samples {
        let sigma = nm.sigma(z);
        let w = 1.0 / (sigma * sigma);
        let zs = z / scale;
        for (k, p) in phi.iter_mut().enumerate() {
            *p = zs.powi((k + first) as i32);
        }
        for a in 0..unknowns {
            atb[a] += w * phi[a] * target;
            for b in 0..=a {
                ata[(a, b)] += w * phi[a] * phi[b];
            }
        }
    }
    for a in 0..unknowns {
        for b in 0..a {
            ata[(b, a)] = ata[(a, b)];
        }
    }
    let chol = ata
        .cholesky()
        .ok_or_else(|| Error::Degenerate("singular normal matrix in polynomial fit".into()))?;
    let sol = chol.solve(&atb);
    let mut coeffs = vec![0.0; degree + 1];
    for k in 0..unknowns {
        coeffs[k + first] = sol[k] / scale.powi((k + first) as i32);
    }
    PolyFn::new(coeffs, constant_zero)
}
