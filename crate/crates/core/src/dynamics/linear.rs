use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::NonlinearSystem;
use crate::error::{Error, Result};
use crate::linalg::{expm, serde_matrix};

/// Continuous-time Jacobians at an operating point.
#[derive(Debug, Clone)]
pub struct ContinuousJacobians {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub d: DMatrix<f64>,
}

/// Zero-order-hold discretization of the linearized system, in deviation
/// coordinates around `(x_op, u_op)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscreteLinearModel {
    #[serde(with = "serde_matrix")]
    pub a: DMatrix<f64>,
    #[serde(with = "serde_matrix")]
    pub b: DMatrix<f64>,
    #[serde(with = "serde_matrix")]
    pub c: DMatrix<f64>,
    #[serde(with = "serde_matrix")]
    pub d: DMatrix<f64>,
    pub tau: f64,
    pub x_op: Vec<f64>,
    pub u_op: Vec<f64>,
    pub y_op: Vec<f64>,
}

impl DiscreteLinearModel {
    pub fn from_system(
        sys: &dyn NonlinearSystem,
        x_op: &[f64],
        u_op: &[f64],
        tau: f64,
    ) -> Result<Self> {
        let jac = linearize(sys, x_op, u_op)?;
        let (a, b) = discretize_zoh(&jac.a, &jac.b, tau)?;
        let mut y_op = vec![0.0; sys.output_dim()];
        sys.output(x_op, u_op, &mut y_op)?;
        Ok(Self {
            a,
            b,
            c: jac.c,
            d: jac.d,
            tau,
            x_op: x_op.to_vec(),
            u_op: u_op.to_vec(),
            y_op,
        })
    }

    pub fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.b.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.c.nrows()
    }
}

/// Jacobians of `f` and `h` at `(x, u)`. Analytic when the system supplies
/// them, otherwise central differences with step `max(1e-6, 1e-6 |z_i|)`.
pub fn linearize(sys: &dyn NonlinearSystem, x: &[f64], u: &[f64]) -> Result<ContinuousJacobians> {
    let n = sys.state_dim();
    let nu = sys.input_dim();
    let ny = sys.output_dim();
    if x.len() != n || u.len() != nu {
        return Err(Error::DimensionMismatch(format!(
            "linearize: expected x in R^{n}, u in R^{nu}"
        )));
    }
    let mut f0 = vec![0.0; n];
    sys.derivative(x, u, &mut f0)?;
    if f0.iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain("f is not finite at the operating point".into()));
    }

    let (a, b) = match sys.jacobians(x, u) {
        Some(j) => j,
        None => {
            let jf = central_difference(n, x, u, |xx, uu, out| sys.derivative(xx, uu, out))?;
            (jf.columns(0, n).into_owned(), jf.columns(n, nu).into_owned())
        }
    };
    let (c, d) = match sys.output_jacobians(x, u) {
        Some(j) => j,
        None => {
            let jh = central_difference(ny, x, u, |xx, uu, out| sys.output(xx, uu, out))?;
            (jh.columns(0, n).into_owned(), jh.columns(n, nu).into_owned())
        }
    };
    for (offset, m) in [(0, &a), (n, &b)] {
        if let Some(col) = first_nonfinite_column(m) {
            return Err(Error::LinearizationFailure { column: offset + col });
        }
    }
    Ok(ContinuousJacobians { a, b, c, d })
}

fn first_nonfinite_column(m: &DMatrix<f64>) -> Option<usize> {
    m.column_iter().position(|c| c.iter().any(|v| !v.is_finite()))
}

fn central_difference<F>(rows: usize, x: &[f64], u: &[f64], eval: F) -> Result<DMatrix<f64>>
where
    F: Fn(&[f64], &[f64], &mut [f64]) -> Result<()>,
{
    let n = x.len();
    let z: Vec<f64> = x.iter().chain(u).copied().collect();
    let mut jac = DMatrix::zeros(rows, z.len());
    let mut plus = vec![0.0; rows];
    let mut minus = vec![0.0; rows];
    for i in 0..z.len() {
        let h = (1e-6 * z[i].abs()).max(1e-6);
        let mut zp = z.clone();
        let mut zm = z.clone();
        zp[i] += h;
        zm[i] -= h;
        eval(&zp[..n], &zp[n..], &mut plus)?;
        eval(&zm[..n], &zm[n..], &mut minus)?;
        let span = zp[i] - zm[i];
        for r in 0..rows {
            let v = (plus[r] - minus[r]) / span;
            if !v.is_finite() {
                return Err(Error::LinearizationFailure { column: i });
            }
            jac[(r, i)] = v;
        }
    }
    Ok(jac)
}

/// `[A_d B_d; 0 I] = exp([A_c B_c; 0 0] tau)`.
pub fn discretize_zoh(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    tau: f64,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    if !(tau > 0.0) {
        return Err(Error::Domain(format!("sampling time must be positive, got {tau}")));
    }
    let n = a.nrows();
    let nu = b.ncols();
    if a.ncols() != n || b.nrows() != n {
        return Err(Error::DimensionMismatch("discretize_zoh: A/B shapes".into()));
    }
    let mut aug = DMatrix::zeros(n + nu, n + nu);
    aug.view_mut((0, 0), (n, n)).copy_from(&(a * tau));
    aug.view_mut((0, n), (n, nu)).copy_from(&(b * tau));
    let e = expm(&aug);
    Ok((e.view((0, 0), (n, n)).into_owned(), e.view((0, n), (n, nu)).into_owned()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{LinearSystem, Pendulum, VanDerPol};
    use crate::linalg::max_abs_diff;

    #[test]
    fn pendulum_jacobian_at_origin() {
        let p = Pendulum { gravity_over_length: 4.0, damping: 0.3, drag: 0.0 };
        let j = linearize(&p, &[0.0, 0.0], &[0.0]).unwrap();
        assert_eq!(j.a, DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -4.0, -0.3]));
        assert_eq!(j.b, DMatrix::from_row_slice(2, 1, &[0.0, 1.0]));
    }

    #[test]
    fn finite_difference_recovers_linear_system() {
        // Wrap to hide the analytic Jacobians.
        struct Hidden(LinearSystem);
        impl NonlinearSystem for Hidden {
            fn name(&self) -> &str {
                "hidden"
            }
            fn state_dim(&self) -> usize {
                self.0.state_dim()
            }
            fn input_dim(&self) -> usize {
                self.0.input_dim()
            }
            fn output_dim(&self) -> usize {
                self.0.output_dim()
            }
            fn derivative(&self, x: &[f64], u: &[f64], dx: &mut [f64]) -> Result<()> {
                self.0.derivative(x, u, dx)
            }
            fn output(&self, x: &[f64], u: &[f64], y: &mut [f64]) -> Result<()> {
                self.0.output(x, u, y)
            }
        }
        let a = DMatrix::from_row_slice(2, 2, &[0.3, -1.2, 2.0, -0.7]);
        let b = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, -0.25, 3.0]);
        let sys = Hidden(LinearSystem::new(a.clone(), b.clone()));
        // Cancellation error of the differences scales like eps |f| / h, so the
        // point keeps |f| moderate.
        let j = linearize(&sys, &[1.0, -3.0], &[0.5, 2.0]).unwrap();
        assert!(max_abs_diff(&j.a, &a) < 1e-8);
        assert!(max_abs_diff(&j.b, &b) < 1e-8);
        assert!(max_abs_diff(&j.c, &DMatrix::identity(2, 2)) < 1e-8);
    }

    #[test]
    fn van_der_pol_jacobian_by_differences() {
        let mu = 1.7;
        let j = linearize(&VanDerPol { mu }, &[0.0, 0.0], &[0.0]).unwrap();
        let expected = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, mu]);
        assert!(max_abs_diff(&j.a, &expected) < 1e-6);
    }

    #[test]
    fn non_finite_derivative_fails() {
        struct Singular;
        impl NonlinearSystem for Singular {
            fn name(&self) -> &str {
                "singular"
            }
            fn state_dim(&self) -> usize {
                1
            }
            fn input_dim(&self) -> usize {
                1
            }
            fn output_dim(&self) -> usize {
                1
            }
            fn derivative(&self, x: &[f64], _u: &[f64], dx: &mut [f64]) -> Result<()> {
                dx[0] = if x[0] > 0.0 { f64::INFINITY } else { 0.0 };
                Ok(())
            }
            fn output(&self, x: &[f64], _u: &[f64], y: &mut [f64]) -> Result<()> {
                y[0] = x[0];
                Ok(())
            }
        }
        assert!(matches!(
            linearize(&Singular, &[0.0], &[0.0]),
            Err(Error::LinearizationFailure { column: 0 })
        ));
    }

    #[test]
    fn zoh_integrator_and_double_integrator() {
        let (ad, bd) = discretize_zoh(
            &DMatrix::from_element(1, 1, 0.0),
            &DMatrix::from_element(1, 1, 1.0),
            1.0,
        )
        .unwrap();
        assert!((ad[(0, 0)] - 1.0).abs() < 1e-15 && (bd[(0, 0)] - 1.0).abs() < 1e-15);

        let tau = 0.37;
        let a = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]);
        let b = DMatrix::from_row_slice(2, 1, &[0.0, 1.0]);
        let (ad, bd) = discretize_zoh(&a, &b, tau).unwrap();
        assert!(max_abs_diff(&ad, &DMatrix::from_row_slice(2, 2, &[1.0, tau, 0.0, 1.0])) < 1e-14);
        assert!(max_abs_diff(&bd, &DMatrix::from_row_slice(2, 1, &[tau * tau / 2.0, tau])) < 1e-14);
    }

    #[test]
    fn zoh_rejects_nonpositive_tau() {
        let z = DMatrix::zeros(1, 1);
        assert!(discretize_zoh(&z, &z, 0.0).is_err());
    }
}
