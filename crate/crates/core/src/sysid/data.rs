use nalgebra::{DMatrix, DVector};

use super::basis::{Exponents, MonomialBasis};
use crate::dynamics::{simulate_nonlinear, DiscreteLinearModel, NonlinearSystem};
use crate::envelope::{halton_sample, Hyperrectangle};
use crate::error::{Error, Result};
use crate::linalg::vector;

/// Deviation samples `z_bar = [p_x; p_u]` with the one-step discrepancy of
/// every state equation and the static discrepancy of every output.
#[derive(Debug, Clone)]
pub struct DiscrepancyData {
    pub samples: Vec<Vec<f64>>,
    /// `state_targets[k][i]`: discrepancy of state equation `k` at sample `i`.
    pub state_targets: Vec<Vec<f64>>,
    pub output_targets: Vec<Vec<f64>>,
    pub dropped: usize,
}

impl DiscrepancyData {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn state_target(&self, k: usize) -> DVector<f64> {
        DVector::from_column_slice(&self.state_targets[k])
    }

    pub fn output_target(&self, k: usize) -> DVector<f64> {
        DVector::from_column_slice(&self.output_targets[k])
    }
}

/// Regressor matrix: one row of monomial values per sample.
pub fn regressor(block: &[Exponents], samples: &[Vec<f64>]) -> DMatrix<f64> {
    let mut theta = DMatrix::zeros(samples.len(), block.len());
    for (i, z) in samples.iter().enumerate() {
        for (j, v) in MonomialBasis::evaluate_block(block, z).into_iter().enumerate() {
            theta[(i, j)] = v;
        }
    }
    theta
}

/// Draws `count` Halton points from `bounds` (starting at sequence index
/// `skip`) and measures, for each, how far one ZOH step of the nonlinear
/// system departs from the discrete linear model.
///
/// The operating point's own one-step drift is subtracted, so the targets are
/// purely nonlinear even when `(x_op, u_op)` is not an equilibrium.
pub fn generate_discrepancy_data(
    sys: &dyn NonlinearSystem,
    lin: &DiscreteLinearModel,
    bounds: &Hyperrectangle,
    count: usize,
    skip: u64,
    step: f64,
) -> Result<DiscrepancyData> {
    if count == 0 {
        return Err(Error::Config("discrepancy data needs at least one sample".into()));
    }
    let n = sys.state_dim();
    let nu = sys.input_dim();
    let ny = sys.output_dim();
    if bounds.dim() != n + nu {
        return Err(Error::DimensionMismatch(format!(
            "envelope has {} dimensions, system has {}",
            bounds.dim(),
            n + nu
        )));
    }
    let op_next = simulate_nonlinear(sys, &lin.x_op, std::slice::from_ref(&lin.u_op), lin.tau, step)?;
    let drift: Vec<f64> = op_next.states[1].iter().zip(&lin.x_op).map(|(a, b)| a - b).collect();

    let points = halton_sample(n + nu, count, bounds, skip)?;
    let output_rows = sys.output_equation_variables().len();
    let mut data = DiscrepancyData {
        samples: Vec::with_capacity(count),
        state_targets: vec![Vec::with_capacity(count); n],
        output_targets: vec![Vec::with_capacity(count); output_rows],
        dropped: 0,
    };
    let mut y = vec![0.0; ny];
    for (i, z) in points.into_iter().enumerate() {
        let (px, pu) = z.split_at(n);
        let x0: Vec<f64> = px.iter().zip(&lin.x_op).map(|(a, b)| a + b).collect();
        let u0: Vec<f64> = pu.iter().zip(&lin.u_op).map(|(a, b)| a + b).collect();
        let next = match simulate_nonlinear(sys, &x0, std::slice::from_ref(&u0), lin.tau, step) {
            Ok(t) => t,
            Err(Error::Divergence { time }) => {
                log::warn!("discrepancy sample {i} diverged at t = {time}; dropped");
                data.dropped += 1;
                continue;
            }
            Err(e) => return Err(e),
        };
        let linear = &lin.a * vector(px) + &lin.b * vector(pu);
        for k in 0..n {
            let x_bar = next.states[1][k] - lin.x_op[k];
            data.state_targets[k].push(x_bar - linear[k] - drift[k]);
        }
        if output_rows > 0 {
            sys.output(&x0, &u0, &mut y)?;
            let lin_y = &lin.c * vector(px) + &lin.d * vector(pu);
            for k in 0..output_rows {
                data.output_targets[k].push(y[k] - lin.y_op[k] - lin_y[k]);
            }
        }
        data.samples.push(z);
    }
    Ok(data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{LinearSystem, VanDerPol};

    #[test]
    fn linear_system_has_no_discrepancy() {
        let a = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -2.0, -0.4]);
        let b = DMatrix::from_row_slice(2, 1, &[0.0, 1.0]);
        let sys = LinearSystem::new(a, b);
        let lin = DiscreteLinearModel::from_system(&sys, &[0.0, 0.0], &[0.0], 0.05).unwrap();
        let bounds = Hyperrectangle::symmetric(&[1.0, 2.0, 1.0]).unwrap();
        let data = generate_discrepancy_data(&sys, &lin, &bounds, 64, 1, 0.05 / 20.0).unwrap();
        assert_eq!(data.len(), 64);
        let worst = data
            .state_targets
            .iter()
            .flatten()
            .fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(worst < 1e-8, "{worst}");
    }

    #[test]
    fn van_der_pol_matches_first_order_taylor() {
        // Box kept away from the axes so the O(tau^2) remainder stays below
        // 5% of the leading -mu tau x1^2 x2 term at every sample.
        let mu = 1.0;
        let tau = 0.01;
        let sys = VanDerPol { mu };
        let lin = DiscreteLinearModel::from_system(&sys, &[0.0, 0.0], &[0.0], tau).unwrap();
        let bounds = Hyperrectangle::new(
            vec![0.5, 0.5, -0.1],
            vec![1.0, 1.0, 0.1],
            vec!["x1".into(), "x2".into(), "u".into()],
        )
        .unwrap();
        let data = generate_discrepancy_data(&sys, &lin, &bounds, 200, 1, tau / 20.0).unwrap();
        let mut checked = 0;
        for (z, dx2) in data.samples.iter().zip(&data.state_targets[1]) {
            let oracle = -mu * tau * z[0] * z[0] * z[1];
            if oracle.abs() > 1e-4 {
                assert!(((dx2 - oracle) / oracle).abs() < 0.05, "z = {z:?}: {dx2} vs {oracle}");
                checked += 1;
            }
        }
        assert!(checked > 150);
    }

    #[test]
    fn regressor_shape() {
        let samples = vec![vec![1.0, 2.0], vec![-1.0, 0.5], vec![0.0, 3.0]];
        let theta = regressor(&[vec![2, 0], vec![1, 1]], &samples);
        assert_eq!(theta.shape(), (3, 2));
        assert_eq!(theta[(1, 1)], -0.5);
    }
}
