//! Depth correction functions: per-pixel polynomials blended bilinearly from a
//! grid of control pixels.

mod apply;
mod global;
mod poly;
mod undistortion;

pub use apply::{
    apply_full_correction, apply_global_cloud, apply_undistortion_cloud, apply_undistortion_image, Corrector,
};
pub use global::{complete_dependent_corner, global_eval, GlobalMap};
pub use poly::{fit_weighted_poly, PolyFn, SampleSet, MAX_DEGREE};
pub use undistortion::{ControlWeight, UndistortionMap};

/// Bilinear stencil of pixel `(u, v)` on a control grid with spacing
/// `(bin_x, bin_y)`: control indices `(i, j)` and weights
/// `(1 - |u - s| / bin_x) * (1 - |v - t| / bin_y)`, ordered
/// `(i0, j0), (i0 + 1, j0), (i0, j0 + 1), (i0 + 1, j0 + 1)`.
#[inline]
pub(crate) fn bilinear_stencil(u: usize, v: usize, bin_x: usize, bin_y: usize) -> [(usize, usize, f64); 4] {
    stencil_in_cell(u, v, bin_x, bin_y, u / bin_x, v / bin_y)
}

/// Same as [`bilinear_stencil`] but for an explicitly chosen cell; pixels on
/// a cell border belong to both neighbouring cells.
#[inline]
pub(crate) fn stencil_in_cell(
    u: usize,
    v: usize,
    bin_x: usize,
    bin_y: usize,
    i0: usize,
    j0: usize,
) -> [(usize, usize, f64); 4] {
    let (bx, by) = (bin_x as f64, bin_y as f64);
    let (s0, t0) = ((i0 * bin_x) as f64, (j0 * bin_y) as f64);
    let (s1, t1) = (s0 + bx, t0 + by);
    let (uf, vf) = (u as f64, v as f64);
    let wx0 = 1.0 - (uf - s0).abs() / bx;
    let wx1 = 1.0 - (s1 - uf).abs() / bx;
    let wy0 = 1.0 - (vf - t0).abs() / by;
    let wy1 = 1.0 - (t1 - vf).abs() / by;
    [
        (i0, j0, wx0 * wy0),
        (i0 + 1, j0, wx1 * wy0),
        (i0, j0 + 1, wx0 * wy1),
        (i0 + 1, j0 + 1, wx1 * wy1),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(10_000))]
        #[test]
        fn partition_of_unity(bx in 1usize..64, by in 1usize..64, u in 0usize..2000, v in 0usize..2000) {
            let s: f64 = bilinear_stencil(u, v, bx, by).iter().map(|w| w.2).sum();
            prop_assert!((s - 1.0).abs() < 1e-12);
            prop_assert!(bilinear_stencil(u, v, bx, by).iter().all(|w| (0.0..=1.0).contains(&w.2)));
        }
    }
}
