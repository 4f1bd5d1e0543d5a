//! Damped Gauss-Newton least squares for small parametric models.

use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::prelude::*;

use crate::{Error, Result};

/// One weighted observation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DataPoint {
    pub x: f64,
    pub y: f64,
    pub sigma: f64,
}

/// A scalar parametric curve y = f(x; params).
pub trait FitModel {
    fn param_names(&self) -> &'static [&'static str];

    fn eval(&self, x: f64, params: &[f64]) -> f64;

    /// Analytic gradient of `eval` with respect to the parameters, written
    /// into `out`. Returns false when no analytic form is provided; the
    /// engine then falls back to central finite differences.
    fn jacobian_row(&self, x: f64, params: &[f64], out: &mut [f64]) -> bool {
        let _ = (x, params, out);
        false
    }
}

/// Engine settings; the defaults implement the documented contract
/// (relative step and cost change below 1e-8 within 200 iterations).
#[derive(Debug, Clone, Copy)]
pub struct FitOptions {
    pub max_iterations: usize,
    pub rel_tolerance: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            max_iterations: 200,
            rel_tolerance: 1e-8,
        }
    }
}

/// Parameter estimates with covariance and fit diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub param_names: Vec<String>,
    pub params: Vec<f64>,
    /// Covariance of the estimates from the linearized residuals,
    /// row-major `n x n`.
    pub covariance: Vec<f64>,
    /// Euclidean norm of the weighted residual vector at the solution.
    pub residual_norm: f64,
    pub iterations: usize,
    pub converged: bool,
}

impl FitResult {
    /// One-sigma errors, the square roots of the covariance diagonal.
    pub fn errors(&self) -> Vec<f64> {
        let n = self.params.len();
        (0..n).map(|i| self.covariance[i * n + i].max(0.0).sqrt()).collect()
    }

    pub fn chi_squared(&self) -> f64 {
        self.residual_norm * self.residual_norm
    }

    pub fn reduced_chi_squared(&self, n_points: usize) -> f64 {
        let dof = n_points.saturating_sub(self.params.len()).max(1);
        self.chi_squared() / dof as f64
    }
}

/// Central-difference gradient of `model.eval` at one point; the
/// independent check for analytic Jacobians.
pub fn numeric_jacobian_row(model: &dyn FitModel, x: f64, params: &[f64], out: &mut [f64]) {
    let mut probe: Vec<f64> = params.to_vec();
    let rel = f64::EPSILON.cbrt();
    for j in 0..params.len() {
        let h = rel * params[j].abs().max(rel);
        probe[j] = params[j] + h;
        let hi = model.eval(x, &probe);
        probe[j] = params[j] - h;
        let lo = model.eval(x, &probe);
        probe[j] = params[j];
        out[j] = (hi - lo) / (2.0 * h);
    }
}

/// Minimizes sum(((y - f(x; p)) / sigma)^2) by Gauss-Newton steps with
/// Levenberg damping of the normal equations.
///
/// Convergence requires both the relative step and the relative cost
/// change to drop below the tolerance. Singular normal equations or a
/// runaway damping factor end the fit with `converged = false` and the
/// best parameters found so far.
pub fn fit_least_squares(
    model: &dyn FitModel,
    data: &[DataPoint],
    init: &[f64],
    options: &FitOptions,
) -> Result<FitResult> {
    let n_params = init.len();
    if n_params == 0 || n_params != model.param_names().len() {
        return Err(Error::InvalidParameter(
            "initial guess does not match the model parameters".into(),
        ));
    }
    if data.len() < n_params {
        return Err(Error::InvalidData(
            "fewer data points than model parameters".into(),
        ));
    }
    for d in data {
        if !d.x.is_finite() || !d.y.is_finite() || !d.sigma.is_finite() {
            return Err(Error::InvalidData("non-finite value in fit data".into()));
        }
        if !(d.sigma > 0.0) {
            return Err(Error::InvalidData("sigma must be positive".into()));
        }
    }
    if init.iter().any(|p| !p.is_finite()) {
        return Err(Error::InvalidParameter("non-finite initial guess".into()));
    }

    let scale: Vec<f64> = init.iter().map(|p| p.abs().max(1e-12)).collect();
    let mut params = init.to_vec();
    let mut cost = weighted_cost(model, data, &params);
    let mut lambda = 1e-3;
    let mut converged = false;
    let mut iterations = 0;

    let mut gradient = alloc::vec![0.0; n_params];
    let mut normal = alloc::vec![0.0; n_params * n_params];
    let mut row = alloc::vec![0.0; n_params];

    for iter in 0..options.max_iterations {
        iterations = iter + 1;
        build_normal_equations(model, data, &params, &mut normal, &mut gradient, &mut row);

        // Levenberg damping on the diagonal; retry with a larger factor
        // until a step lowers the cost.
        let mut stepped = false;
        while lambda <= 1e14 {
            let mut damped = normal.clone();
            for j in 0..n_params {
                let d = normal[j * n_params + j];
                damped[j * n_params + j] = d + lambda * d.max(1e-30);
            }
            let delta = match scaled_solve(&damped, &gradient, n_params) {
                Some(step) => step,
                None => break,
            };
            let trial: Vec<f64> = params.iter().zip(&delta).map(|(p, d)| p + d).collect();
            let trial_cost = weighted_cost(model, data, &trial);
            if trial_cost.is_finite() && trial_cost <= cost {
                let rel_step = delta
                    .iter()
                    .zip(&params)
                    .zip(&scale)
                    .map(|((d, p), s)| d.abs() / p.abs().max(*s))
                    .fold(0.0, f64::max);
                let rel_cost = (cost - trial_cost) / cost.max(1e-300);
                params = trial;
                cost = trial_cost;
                lambda = (lambda / 4.0).max(1e-12);
                stepped = true;
                if rel_step < options.rel_tolerance && rel_cost < options.rel_tolerance {
                    converged = true;
                }
                break;
            }
            lambda *= 10.0;
        }
        if converged || !stepped {
            break;
        }
    }

    if params.iter().any(|p| !p.is_finite()) {
        return Err(Error::InvalidData("fit diverged to non-finite parameters".into()));
    }

    build_normal_equations(model, data, &params, &mut normal, &mut gradient, &mut row);
    let covariance = match invert(&normal, n_params) {
        Some(cov) => cov,
        None => {
            converged = false;
            alloc::vec![0.0; n_params * n_params]
        }
    };

    Ok(FitResult {
        param_names: model.param_names().iter().map(|s| s.to_string()).collect(),
        params,
        covariance,
        residual_norm: cost.sqrt(),
        iterations,
        converged,
    })
}

fn weighted_cost(model: &dyn FitModel, data: &[DataPoint], params: &[f64]) -> f64 {
    data.iter()
        .map(|d| {
            let r = (d.y - model.eval(d.x, params)) / d.sigma;
            r * r
        })
        .sum()
}

/// Accumulates J^T J and J^T r for the weighted residuals, using the
/// model's analytic gradient when it has one.
fn build_normal_equations(
    model: &dyn FitModel,
    data: &[DataPoint],
    params: &[f64],
    normal: &mut [f64],
    gradient: &mut [f64],
    row: &mut [f64],
) {
    let n = params.len();
    normal.fill(0.0);
    gradient.fill(0.0);
    for d in data {
        if !model.jacobian_row(d.x, params, row) {
            numeric_jacobian_row(model, d.x, params, row);
        }
        let res = (d.y - model.eval(d.x, params)) / d.sigma;
        let inv_sigma = 1.0 / d.sigma;
        for j in 0..n {
            let gj = row[j] * inv_sigma;
            gradient[j] += gj * res;
            for k in j..n {
                normal[j * n + k] += gj * row[k] * inv_sigma;
            }
        }
    }
    for j in 0..n {
        for k in 0..j {
            normal[j * n + k] = normal[k * n + j];
        }
    }
}

/// Solves A x = b after Jacobi scaling, so parameters of wildly different
/// magnitudes (frequencies in Hz against probabilities) do not wreck the
/// conditioning. None when the scaled system is singular.
fn scaled_solve(a: &[f64], b: &[f64], n: usize) -> Option<Vec<f64>> {
    let scale: Vec<f64> = (0..n)
        .map(|j| a[j * n + j].abs().sqrt().max(1e-150))
        .collect();
    let mut m = alloc::vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            m[i * n + j] = a[i * n + j] / (scale[i] * scale[j]);
        }
    }
    let bs: Vec<f64> = b.iter().zip(&scale).map(|(v, s)| v / s).collect();
    let y = solve(&mut m, &bs, n)?;
    Some(y.iter().zip(&scale).map(|(v, s)| v / s).collect())
}

/// Gaussian elimination with partial pivoting on a Jacobi-scaled matrix;
/// None when singular.
fn solve(a: &mut [f64], b: &[f64], n: usize) -> Option<Vec<f64>> {
    let mut x = b.to_vec();
    for col in 0..n {
        let pivot = (col..n).max_by(|&i, &j| {
            a[i * n + col]
                .abs()
                .partial_cmp(&a[j * n + col].abs())
                .expect("finite matrix")
        })?;
        if a[pivot * n + col].abs() < 1e-12 {
            return None;
        }
        if pivot != col {
            for k in 0..n {
                a.swap(col * n + k, pivot * n + k);
            }
            x.swap(col, pivot);
        }
        let inv = 1.0 / a[col * n + col];
        for i in col + 1..n {
            let factor = a[i * n + col] * inv;
            if factor == 0.0 {
                continue;
            }
            for k in col..n {
                a[i * n + k] -= factor * a[col * n + k];
            }
            x[i] -= factor * x[col];
        }
    }
    for col in (0..n).rev() {
        x[col] /= a[col * n + col];
        for i in 0..col {
            x[i] -= a[i * n + col] * x[col];
        }
    }
    if x.iter().all(|v| v.is_finite()) {
        Some(x)
    } else {
        None
    }
}

/// Inverse of a symmetric matrix by scaled column solves; None when
/// singular.
fn invert(a: &[f64], n: usize) -> Option<Vec<f64>> {
    let mut out = alloc::vec![0.0; n * n];
    let mut unit = alloc::vec![0.0; n];
    for col in 0..n {
        unit.fill(0.0);
        unit[col] = 1.0;
        let x = scaled_solve(a, &unit, n)?;
        for (i, v) in x.iter().enumerate() {
            out[i * n + col] = *v;
        }
    }
    // symmetrize against elimination round-off
    for i in 0..n {
        for j in 0..i {
            let m = 0.5 * (out[i * n + j] + out[j * n + i]);
            out[i * n + j] = m;
            out[j * n + i] = m;
        }
    }
    Some(out)
}
