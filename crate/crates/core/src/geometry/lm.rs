//! Levenberg-Marquardt with forward-difference Jacobians.
//!
//! Cost is the plain sum of squared residuals. Problems with exploitable
//! sparsity override [`LeastSquaresProblem::normal_equations`]; problems with
//! manifold parameters (rotations) re-center their increments in
//! [`LeastSquaresProblem::accept`].

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LmOptions {
    pub max_iter: usize,
    /// Relative cost decrease below which an accepted step ends the run.
    pub ftol: f64,
    /// Step norm (relative to the parameter norm) below which the run ends.
    pub xtol: f64,
    /// Absolute gradient (`J^T r`, max-norm) threshold.
    pub gtol: f64,
    pub damping_init: f64,
}

impl Default for LmOptions {
    fn default() -> Self {
        Self {
            max_iter: 200,
            ftol: 1e-10,
            xtol: 1e-12,
            gtol: 1e-10,
            damping_init: 1e-3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    CostTolerance,
    StepTolerance,
    GradientTolerance,
    /// Damping grew past its ceiling without finding a decreasing step.
    DampingSaturated,
    MaxIterations,
}

#[derive(Debug, Clone)]
pub struct LmReport {
    pub x: Vec<f64>,
    pub initial_cost: f64,
    pub final_cost: f64,
    pub iterations: usize,
    pub converged: bool,
    pub termination: Termination,
    /// Cost after every accepted step, starting with the initial cost.
    pub cost_trace: Vec<f64>,
}

/// Forward-difference step for a parameter value.
#[inline]
pub fn fd_step(x: f64) -> f64 {
    (1e-6 * x.abs()).max(1e-6)
}

/// Dense forward-difference Jacobian of `f` at `x`, given `r0 = f(x)`.
pub fn forward_difference_jacobian<F>(f: F, x: &[f64], r0: &[f64]) -> DMatrix<f64>
where
    F: Fn(&[f64]) -> Vec<f64>,
{
    let mut jac = DMatrix::zeros(r0.len(), x.len());
    let mut xp = x.to_vec();
    for j in 0..x.len() {
        let h = fd_step(x[j]);
        xp[j] = x[j] + h;
        let rp = f(&xp);
        xp[j] = x[j];
        for (i, (a, b)) in rp.iter().zip(r0).enumerate() {
            jac[(i, j)] = (a - b) / h;
        }
    }
    jac
}

pub trait LeastSquaresProblem {
    fn residuals(&self, x: &[f64]) -> Vec<f64>;

    /// Returns `(J^T J, J^T r)` at `x`, where `r = residuals(x)`.
    fn normal_equations(&self, x: &[f64], r: &[f64]) -> (DMatrix<f64>, DVector<f64>) {
        let jac = forward_difference_jacobian(|p| self.residuals(p), x, r);
        let jt = jac.transpose();
        let jtr = &jt * DVector::from_column_slice(r);
        (jt * jac, jtr)
    }

    /// Called after every accepted step. May rewrite `x` to an equivalent
    /// parameterization; returns true if it did.
    fn accept(&mut self, _x: &mut [f64]) -> bool {
        false
    }
}

struct FnProblem<F>(F);

impl<F: Fn(&[f64]) -> Vec<f64>> LeastSquaresProblem for FnProblem<F> {
    fn residuals(&self, x: &[f64]) -> Vec<f64> {
        (self.0)(x)
    }
}

/// Minimizes `||f(x)||^2` starting from `x0`.
pub fn lm_minimize_fn<F>(f: F, x0: &[f64], opts: &LmOptions) -> Result<LmReport>
where
    F: Fn(&[f64]) -> Vec<f64>,
{
    lm_minimize(&mut FnProblem(f), x0, opts)
}

fn sum_sq(r: &[f64]) -> f64 {
    r.iter().map(|v| v * v).sum()
}

const MAX_DAMPING: f64 = 1e16;

pub fn lm_minimize<P: LeastSquaresProblem + ?Sized>(
    problem: &mut P,
    x0: &[f64],
    opts: &LmOptions,
) -> Result<LmReport> {
    let mut x = x0.to_vec();
    let mut r = problem.residuals(&x);
    if r.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteResidual);
    }
    let mut cost = sum_sq(&r);
    let initial_cost = cost;
    let mut trace = vec![cost];
    let mut lambda = opts.damping_init;
    let mut termination = Termination::MaxIterations;
    let mut iterations = 0;
    let n = x.len();

    'outer: while iterations < opts.max_iter {
        if cost == 0.0 {
            termination = Termination::CostTolerance;
            break;
        }
        let (jtj, jtr) = problem.normal_equations(&x, &r);
        if jtr.amax() <= opts.gtol {
            termination = Termination::GradientTolerance;
            break;
        }
        iterations += 1;
        let max_diag = (0..n).map(|i| jtj[(i, i)]).fold(0.0, f64::max);
        let floor = (max_diag * 1e-12).max(1e-300);
        loop {
            let mut a = jtj.clone();
            for i in 0..n {
                a[(i, i)] += lambda * jtj[(i, i)].max(floor);
            }
            let Some(chol) = a.cholesky() else {
                lambda *= 10.0;
                if lambda > MAX_DAMPING {
                    termination = Termination::DampingSaturated;
                    break 'outer;
                }
                continue;
            };
            let step = chol.solve(&(-&jtr));
            let xnorm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
            if step.norm() <= opts.xtol * (xnorm + opts.xtol) {
                termination = Termination::StepTolerance;
                break 'outer;
            }
            let x_new: Vec<f64> = x.iter().zip(step.iter()).map(|(a, b)| a + b).collect();
            let r_new = problem.residuals(&x_new);
            let c_new = sum_sq(&r_new);
            let best = cost.min(*trace.last().unwrap());
            if c_new.is_finite() && c_new < best {
                let rel = (cost - c_new) / cost;
                x = x_new;
                r = r_new;
                cost = c_new;
                trace.push(cost);
                lambda = (lambda / 10.0).max(1e-300);
                if problem.accept(&mut x) {
                    r = problem.residuals(&x);
                    cost = sum_sq(&r);
                }
                if rel < opts.ftol {
                    termination = Termination::CostTolerance;
                    break 'outer;
                }
                break;
            }
            lambda *= 10.0;
            if lambda > MAX_DAMPING {
                termination = Termination::DampingSaturated;
                break 'outer;
            }
        }
    }

    let converged = termination != Termination::MaxIterations;
    Ok(LmReport {
        x,
        initial_cost,
        final_cost: cost,
        iterations,
        converged,
        termination,
        cost_trace: trace,
    })
}
