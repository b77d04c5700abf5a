//! Nonlinear system registration, linearization, discretization, simulation
//! and state-feedback design.

mod linear;
mod lqr;
mod plugin;
mod simulate;

pub use linear::{discretize_zoh, linearize, ContinuousJacobians, DiscreteLinearModel};
pub use lqr::lqr_state_feedback;
pub use plugin::SubprocessSystem;
pub use simulate::{
    simulate_closed_loop, simulate_lft, simulate_lpv, simulate_nonlinear, Trajectory,
    DIVERGENCE_THRESHOLD,
};

use nalgebra::DMatrix;

use crate::error::Result;

/// Continuous-time time-invariant system `x' = f(x, u)`, `y = h(x, u)`.
pub trait NonlinearSystem: Send + Sync {
    fn name(&self) -> &str;
    fn state_dim(&self) -> usize;
    fn input_dim(&self) -> usize;
    fn output_dim(&self) -> usize;

    fn derivative(&self, x: &[f64], u: &[f64], dx: &mut [f64]) -> Result<()>;

    fn output(&self, x: &[f64], u: &[f64], y: &mut [f64]) -> Result<()>;

    /// Analytic `(df/dx, df/du)`, if known.
    fn jacobians(&self, _x: &[f64], _u: &[f64]) -> Option<(DMatrix<f64>, DMatrix<f64>)> {
        None
    }

    /// Analytic `(dh/dx, dh/du)`, if known.
    fn output_jacobians(&self, _x: &[f64], _u: &[f64]) -> Option<(DMatrix<f64>, DMatrix<f64>)> {
        None
    }

    /// Variables (indices into `[x; u]`) that appear in each state equation.
    fn equation_variables(&self) -> Vec<Vec<usize>> {
        let all: Vec<usize> = (0..self.state_dim() + self.input_dim()).collect();
        vec![all; self.state_dim()]
    }

    /// Variables appearing nonlinearly in each output equation. Empty when
    /// the output map is linear.
    fn output_equation_variables(&self) -> Vec<Vec<usize>> {
        Vec::new()
    }
}

/// Damped pendulum with optional quadratic drag:
/// `theta' = omega`, `omega' = -(g/L) sin(theta) - c omega - k omega |omega| + u`.
#[derive(Debug, Clone)]
pub struct Pendulum {
    pub gravity_over_length: f64,
    pub damping: f64,
    pub drag: f64,
}

impl Default for Pendulum {
    fn default() -> Self {
        Self { gravity_over_length: 9.81, damping: 0.1, drag: 0.5 }
    }
}

impl Pendulum {
    /// Mechanical energy per unit inertia; conserved when `damping = drag = 0`.
    pub fn energy(&self, x: &[f64]) -> f64 {
        0.5 * x[1] * x[1] + self.gravity_over_length * (1.0 - x[0].cos())
    }
}

impl NonlinearSystem for Pendulum {
    fn name(&self) -> &str {
        "pendulum"
    }
    fn state_dim(&self) -> usize {
        2
    }
    fn input_dim(&self) -> usize {
        1
    }
    fn output_dim(&self) -> usize {
        2
    }

    fn derivative(&self, x: &[f64], u: &[f64], dx: &mut [f64]) -> Result<()> {
        dx[0] = x[1];
        dx[1] = -self.gravity_over_length * x[0].sin() - self.damping * x[1]
            - self.drag * x[1] * x[1].abs()
            + u[0];
        Ok(())
    }

    fn output(&self, x: &[f64], _u: &[f64], y: &mut [f64]) -> Result<()> {
        y.copy_from_slice(x);
        Ok(())
    }

    fn jacobians(&self, x: &[f64], _u: &[f64]) -> Option<(DMatrix<f64>, DMatrix<f64>)> {
        let a = DMatrix::from_row_slice(
            2,
            2,
            &[
                0.0,
                1.0,
                -self.gravity_over_length * x[0].cos(),
                -self.damping - 2.0 * self.drag * x[1].abs(),
            ],
        );
        let b = DMatrix::from_row_slice(2, 1, &[0.0, 1.0]);
        Some((a, b))
    }

    fn output_jacobians(&self, _x: &[f64], _u: &[f64]) -> Option<(DMatrix<f64>, DMatrix<f64>)> {
        Some((DMatrix::identity(2, 2), DMatrix::zeros(2, 1)))
    }

    fn equation_variables(&self) -> Vec<Vec<usize>> {
        vec![vec![1], vec![0, 1, 2]]
    }
}

/// Forced Van der Pol oscillator: `x1' = x2`, `x2' = mu (1 - x1^2) x2 - x1 + u`.
#[derive(Debug, Clone)]
pub struct VanDerPol {
    pub mu: f64,
}

impl Default for VanDerPol {
    fn default() -> Self {
        Self { mu: 1.0 }
    }
}

impl NonlinearSystem for VanDerPol {
    fn name(&self) -> &str {
        "vanderpol"
    }
    fn state_dim(&self) -> usize {
        2
    }
    fn input_dim(&self) -> usize {
        1
    }
    fn output_dim(&self) -> usize {
        2
    }

    fn derivative(&self, x: &[f64], u: &[f64], dx: &mut [f64]) -> Result<()> {
        dx[0] = x[1];
        dx[1] = self.mu * (1.0 - x[0] * x[0]) * x[1] - x[0] + u[0];
        Ok(())
    }

    fn output(&self, x: &[f64], _u: &[f64], y: &mut [f64]) -> Result<()> {
        y.copy_from_slice(x);
        Ok(())
    }

    fn equation_variables(&self) -> Vec<Vec<usize>> {
        vec![vec![1], vec![0, 1, 2]]
    }
}

/// `x' = A x + B u`, `y = C x + D u`.
#[derive(Debug, Clone)]
pub struct LinearSystem {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub d: DMatrix<f64>,
}

impl LinearSystem {
    /// Full-state output.
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>) -> Self {
        let n = a.nrows();
        let nu = b.ncols();
        Self { a, b, c: DMatrix::identity(n, n), d: DMatrix::zeros(n, nu) }
    }
}

impl NonlinearSystem for LinearSystem {
    fn name(&self) -> &str {
        "linear"
    }
    fn state_dim(&self) -> usize {
        self.a.nrows()
    }
    fn input_dim(&self) -> usize {
        self.b.ncols()
    }
    fn output_dim(&self) -> usize {
        self.c.nrows()
    }

    fn derivative(&self, x: &[f64], u: &[f64], dx: &mut [f64]) -> Result<()> {
        let v = &self.a * crate::linalg::vector(x) + &self.b * crate::linalg::vector(u);
        dx.copy_from_slice(v.as_slice());
        Ok(())
    }

    fn output(&self, x: &[f64], u: &[f64], y: &mut [f64]) -> Result<()> {
        let v = &self.c * crate::linalg::vector(x) + &self.d * crate::linalg::vector(u);
        y.copy_from_slice(v.as_slice());
        Ok(())
    }

    fn jacobians(&self, _x: &[f64], _u: &[f64]) -> Option<(DMatrix<f64>, DMatrix<f64>)> {
        Some((self.a.clone(), self.b.clone()))
    }

    fn output_jacobians(&self, _x: &[f64], _u: &[f64]) -> Option<(DMatrix<f64>, DMatrix<f64>)> {
        Some((self.c.clone(), self.d.clone()))
    }
}
