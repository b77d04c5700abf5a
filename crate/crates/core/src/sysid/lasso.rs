//! Sparse regression `min 1/2 ||y - Theta e||^2 + sigma ||e||_1` by FISTA on
//! unit-norm columns, with warm-started sweeps over `sigma`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAX_ITERATIONS: usize = 100_000;
const REL_OBJECTIVE_TOL: f64 = 1e-10;
const TRUNCATION: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct LassoFit {
    pub coefficients: Vec<f64>,
    pub iterations: usize,
    /// Objective in standardized coordinates.
    pub objective: f64,
}

/// One row of the accuracy/complexity trade-off table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParetoPoint {
    pub sigma: f64,
    pub fit_error: f64,
    pub l1_norm: f64,
    pub support: usize,
    pub validation_error: Option<f64>,
}

/// Problem with columns scaled to unit 2-norm; zero columns are left out.
pub struct StandardizedProblem {
    scales: Vec<f64>,
    gram: DMatrix<f64>,
    correlation: DVector<f64>,
    y_norm_sq: f64,
    lipschitz: f64,
}

impl StandardizedProblem {
    pub fn new(theta: &DMatrix<f64>, y: &DVector<f64>) -> Result<Self> {
        if theta.nrows() == 0 {
            return Err(Error::Config("regression needs at least one sample".into()));
        }
        if theta.nrows() != y.len() {
            return Err(Error::DimensionMismatch(format!(
                "regression: {} rows but {} targets",
                theta.nrows(),
                y.len()
            )));
        }
        let scales: Vec<f64> = theta.column_iter().map(|c| c.norm()).collect();
        let mut x = theta.clone();
        for (j, s) in scales.iter().enumerate() {
            let inv = if *s > 0.0 { 1.0 / s } else { 0.0 };
            x.column_mut(j).scale_mut(inv);
        }
        let gram = x.tr_mul(&x);
        let correlation = x.tr_mul(y);
        let lipschitz = power_iteration(&gram) * (1.0 + 1e-6);
        Ok(Self { scales, gram, correlation, y_norm_sq: y.norm_squared(), lipschitz })
    }

    pub fn dim(&self) -> usize {
        self.scales.len()
    }

    /// Smallest `sigma` at which every coefficient is zero.
    pub fn sigma_max(&self) -> f64 {
        self.correlation.amax()
    }

    /// Standardized-coordinate correlations `X'(y - X beta)`.
    pub fn residual_correlation(&self, beta: &DVector<f64>) -> DVector<f64> {
        &self.correlation - &self.gram * beta
    }

    fn objective(&self, beta: &DVector<f64>, sigma: f64) -> f64 {
        let quad = 0.5 * self.y_norm_sq - beta.dot(&self.correlation)
            + 0.5 * beta.dot(&(&self.gram * beta));
        quad.max(0.0) + sigma * beta.lp_norm(1)
    }

    /// Exact objective difference `F(next) - F(prev)`, free of the `|y|^2` constant.
    fn objective_change(&self, next: &DVector<f64>, prev: &DVector<f64>, sigma: f64) -> f64 {
        let diff = next - prev;
        let sum = next + prev;
        -diff.dot(&self.correlation)
            + 0.5 * diff.dot(&(&self.gram * sum))
            + sigma * (next.lp_norm(1) - prev.lp_norm(1))
    }

    pub fn to_original(&self, beta: &DVector<f64>) -> Vec<f64> {
        beta.iter()
            .zip(&self.scales)
            .map(|(b, s)| {
                let e = if *s > 0.0 { b / s } else { 0.0 };
                if e.abs() < TRUNCATION {
                    0.0
                } else {
                    e
                }
            })
            .collect()
    }

    pub fn to_standardized(&self, coefficients: &[f64]) -> DVector<f64> {
        DVector::from_iterator(
            coefficients.len(),
            coefficients.iter().zip(&self.scales).map(|(e, s)| e * s),
        )
    }

    /// FISTA with function-value restarts, started from `warm`.
    pub fn solve(&self, sigma: f64, warm: Option<&DVector<f64>>) -> Result<(DVector<f64>, usize)> {
        if !(sigma >= 0.0) {
            return Err(Error::Domain(format!("sigma must be nonnegative, got {sigma}")));
        }
        let p = self.dim();
        let mut beta = warm.cloned().unwrap_or_else(|| DVector::zeros(p));
        if p == 0 || self.lipschitz == 0.0 {
            return Ok((DVector::zeros(p), 0));
        }
        let step = 1.0 / self.lipschitz;
        let threshold = sigma * step;
        let active: Vec<bool> = self.scales.iter().map(|s| *s > 0.0).collect();
        let mut momentum_point = beta.clone();
        let mut t = 1.0f64;
        let mut objective = self.objective(&beta, sigma);
        let grad_tol = (1e-9 * sigma).max(1e-12 * self.sigma_max()).max(f64::MIN_POSITIVE);
        for iter in 1..=MAX_ITERATIONS {
            let grad = &self.gram * &momentum_point - &self.correlation;
            let mut next = &momentum_point - step * grad;
            for (j, v) in next.iter_mut().enumerate() {
                *v = if active[j] { soft_threshold(*v, threshold) } else { 0.0 };
            }
            let change = self.objective_change(&next, &beta, sigma);
            let mapping = (&momentum_point - &next).amax() * self.lipschitz;
            if change > 0.0 && t > 1.0 {
                // Restart momentum from the last iterate.
                t = 1.0;
                momentum_point = beta.clone();
                continue;
            }
            let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
            momentum_point = &next + ((t - 1.0) / t_next) * (&next - &beta);
            t = t_next;
            beta = next;
            objective += change;
            let scale = objective.abs().max(self.objective(&beta, sigma)).max(f64::MIN_POSITIVE);
            if change.abs() <= REL_OBJECTIVE_TOL * scale && mapping <= grad_tol {
                return Ok((beta, iter));
            }
        }
        let gap = {
            let grad = &self.gram * &beta - &self.correlation;
            let mut probe = &beta - step * grad;
            probe.iter_mut().for_each(|v| *v = soft_threshold(*v, threshold));
            (self.objective(&beta, sigma) - self.objective(&probe, sigma)).abs()
                / self.objective(&beta, sigma).max(f64::MIN_POSITIVE)
        };
        Err(Error::Convergence { iterations: MAX_ITERATIONS, gap })
    }
}

pub fn soft_threshold(v: f64, t: f64) -> f64 {
    if v > t {
        v - t
    } else if v < -t {
        v + t
    } else {
        0.0
    }
}

/// Largest eigenvalue of a symmetric positive semidefinite matrix.
fn power_iteration(gram: &DMatrix<f64>) -> f64 {
    let p = gram.nrows();
    if p == 0 {
        return 0.0;
    }
    let mut v = DVector::from_fn(p, |i, _| 1.0 + 0.01 * i as f64);
    v.normalize_mut();
    let mut lambda = 0.0;
    for _ in 0..10_000 {
        let w = gram * &v;
        let norm = w.norm();
        if norm == 0.0 {
            return 0.0;
        }
        let next = v.dot(&w);
        v = w / norm;
        if (next - lambda).abs() <= 1e-13 * next.abs() {
            lambda = next;
            break;
        }
        lambda = next;
    }
    // Rayleigh quotients approach from below; the norm of G v bounds the
    // dominant eigenvalue more safely.
    lambda.max((gram * &v).norm())
}

pub fn fit_coefficients(theta: &DMatrix<f64>, y: &DVector<f64>, sigma: f64) -> Result<LassoFit> {
    let problem = StandardizedProblem::new(theta, y)?;
    let (beta, iterations) = problem.solve(sigma, None)?;
    Ok(LassoFit {
        objective: problem.objective(&beta, sigma),
        coefficients: problem.to_original(&beta),
        iterations,
    })
}

fn residual_norm(theta: &DMatrix<f64>, y: &DVector<f64>, e: &[f64]) -> f64 {
    (y - theta * DVector::from_column_slice(e)).norm()
}

/// Warm-started solves along `sigmas` (ascending). Returns one row and one
/// coefficient vector per grid point.
pub fn pareto_sweep(
    theta: &DMatrix<f64>,
    y: &DVector<f64>,
    sigmas: &[f64],
    validation: Option<(&DMatrix<f64>, &DVector<f64>)>,
) -> Result<Vec<(ParetoPoint, Vec<f64>)>> {
    if sigmas.is_empty() {
        return Err(Error::Config("sigma grid is empty".into()));
    }
    if sigmas.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::Config("sigma grid must be sorted ascending".into()));
    }
    let problem = StandardizedProblem::new(theta, y)?;
    let mut warm: Option<DVector<f64>> = None;
    let mut rows = Vec::with_capacity(sigmas.len());
    for &sigma in sigmas {
        let (beta, _) = problem.solve(sigma, warm.as_ref())?;
        let e = problem.to_original(&beta);
        let point = ParetoPoint {
            sigma,
            fit_error: residual_norm(theta, y, &e),
            l1_norm: e.iter().map(|v| v.abs()).sum(),
            support: e.iter().filter(|v| **v != 0.0).count(),
            validation_error: validation.map(|(vt, vy)| residual_norm(vt, vy, &e)),
        };
        rows.push((point, e));
        warm = Some(beta);
    }
    Ok(rows)
}

/// Largest `sigma` whose validation error (training error when no validation
/// set was given) stays within `factor` of the error at the smallest `sigma`.
pub fn select_sigma(points: &[ParetoPoint], factor: f64) -> usize {
    let err = |p: &ParetoPoint| p.validation_error.unwrap_or(p.fit_error);
    let Some(first) = points.first() else { return 0 };
    let limit = factor * err(first);
    points
        .iter()
        .rposition(|p| err(p) <= limit)
        .unwrap_or(0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn orthonormal_design() -> DMatrix<f64> {
        // Columns of a 4x4 Hadamard matrix scaled to unit norm, first three kept.
        let h = DMatrix::from_row_slice(
            4,
            3,
            &[1.0, 1.0, 1.0, 1.0, -1.0, 1.0, 1.0, 1.0, -1.0, 1.0, -1.0, -1.0],
        );
        h / 2.0
    }

    #[test]
    fn large_sigma_zeroes_everything() {
        let theta = orthonormal_design();
        let y = DVector::from_column_slice(&[1.0, -2.0, 0.5, 3.0]);
        let sigma = (theta.transpose() * &y).amax();
        let fit = fit_coefficients(&theta, &y, sigma).unwrap();
        assert!(fit.coefficients.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn least_squares_when_unpenalized() {
        let theta = DMatrix::from_row_slice(5, 2, &[1.0, 0.2, 0.5, 1.0, -0.3, 0.7, 2.0, -1.0, 0.1, 0.4]);
        let y = DVector::from_column_slice(&[0.3, -1.0, 2.0, 0.7, 1.1]);
        let ls = (theta.transpose() * &theta).lu().solve(&(theta.transpose() * &y)).unwrap();
        let fit = fit_coefficients(&theta, &y, 0.0).unwrap();
        for (a, b) in fit.coefficients.iter().zip(ls.iter()) {
            assert!((a - b).abs() < 1e-8, "{a} vs {b}");
        }
    }

    #[test]
    fn zero_column_gets_zero_coefficient() {
        let theta = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 2.0, 0.0, -1.0, 0.0]);
        let y = DVector::from_column_slice(&[1.0, 2.0, -1.0]);
        let fit = fit_coefficients(&theta, &y, 0.0).unwrap();
        assert!((fit.coefficients[0] - 1.0).abs() < 1e-10);
        assert_eq!(fit.coefficients[1], 0.0);
    }

    #[test]
    fn single_point_sweep_matches_direct_fit() {
        let theta = DMatrix::from_row_slice(4, 2, &[1.0, 0.5, 0.2, 1.0, -0.4, 0.3, 0.9, -0.8]);
        let y = DVector::from_column_slice(&[1.0, 0.2, -0.3, 0.8]);
        let direct = fit_coefficients(&theta, &y, 0.05).unwrap();
        let sweep = pareto_sweep(&theta, &y, &[0.05], None).unwrap();
        assert_eq!(sweep.len(), 1);
        for (a, b) in sweep[0].1.iter().zip(&direct.coefficients) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn sweep_rejects_unsorted_grid() {
        let theta = orthonormal_design();
        let y = DVector::from_column_slice(&[1.0, 0.0, 0.0, 0.0]);
        assert!(pareto_sweep(&theta, &y, &[0.2, 0.1], None).is_err());
        assert!(pareto_sweep(&theta, &y, &[], None).is_err());
    }

    #[test]
    fn selection_takes_largest_acceptable_sigma() {
        let pt = |sigma, err| ParetoPoint {
            sigma,
            fit_error: err,
            l1_norm: 0.0,
            support: 0,
            validation_error: Some(err),
        };
        let pts = vec![pt(0.01, 1.0), pt(0.1, 1.05), pt(1.0, 1.2), pt(2.0, 1.08)];
        assert_eq!(select_sigma(&pts, 1.1), 3);
        assert_eq!(select_sigma(&pts[..3], 1.1), 1);
    }
}
