/// Depth noise model `sigma(z)` as a polynomial in depth (meters).
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseModel {
    coeffs: Vec<f64>,
}

impl Default for NoiseModel {
    /// Quantization error of a structured-light sensor (Kinect 1 class):
    /// `sigma(z) = -0.00029 + 0.00037 z + 0.001365 z^2`.
    fn default() -> Self {
        Self {
            coeffs: vec![-0.00029, 0.00037, 0.001365],
        }
    }
}

impl NoiseModel {
    /// Working range of the sensor, where `sigma(z) > 0` must hold.
    pub const WORKING_RANGE: (f64, f64) = (0.5, 5.0);

    pub fn new(coeffs: Vec<f64>) -> Self {
        Self { coeffs }
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    /// Evaluates `sigma(z)`.
    pub fn sigma(&self, z: f64) -> f64 {
        self.coeffs.iter().rev().fold(0.0, |acc, c| acc * z + c)
    }

    /// Checks positivity on a dense sampling of the working range.
    pub fn is_positive_on_working_range(&self) -> bool {
        let (lo, hi) = Self::WORKING_RANGE;
        (0..=1000).all(|i| self.sigma(lo + (hi - lo) * i as f64 / 1000.0) > 0.0)
    }
}

/// `sigma(z)` of `nm`.
pub fn sigma_quantization(nm: &NoiseModel, z: f64) -> f64 {
    nm.sigma(z)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn quantization_polynomial_values() {
        let nm = NoiseModel::default();
        assert_relative_eq!(sigma_quantization(&nm, 1.0), 0.001445, epsilon = 1e-15);
        assert_relative_eq!(sigma_quantization(&nm, 2.0), 0.00591, epsilon = 1e-15);
        assert_relative_eq!(sigma_quantization(&nm, 4.0), 0.02303, epsilon = 1e-15);
        assert!(nm.is_positive_on_working_range());
    }
}
