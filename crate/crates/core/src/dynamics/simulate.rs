use std::io::Write;

use nalgebra::{DMatrix, DVector};

use super::{DiscreteLinearModel, NonlinearSystem};
use crate::error::{Error, Result};
use crate::linalg::vector;
use crate::lpvlft::{LftSystem, LpvModel};

/// State norm above which a simulation is declared divergent.
pub const DIVERGENCE_THRESHOLD: f64 = 1e9;

/// Sampled trajectory. `states` has one more entry than `inputs`/`outputs`;
/// output `k` is evaluated at `(states[k], inputs[k])`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    pub inputs: Vec<Vec<f64>>,
    pub outputs: Vec<Vec<f64>>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    /// CSV with one row per step: time, states, inputs, outputs.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let n = self.states.first().map_or(0, Vec::len);
        let nu = self.inputs.first().map_or(0, Vec::len);
        let ny = self.outputs.first().map_or(0, Vec::len);
        let mut header = vec!["time".to_string()];
        header.extend((1..=n).map(|i| format!("x{i}")));
        header.extend((1..=nu).map(|i| format!("u{i}")));
        header.extend((1..=ny).map(|i| format!("y{i}")));
        w.write_record(&header)?;
        for k in 0..self.len() {
            let row: Vec<String> = std::iter::once(self.times[k])
                .chain(self.states[k].iter().copied())
                .chain(self.inputs[k].iter().copied())
                .chain(self.outputs[k].iter().copied())
                .map(|v| v.to_string())
                .collect();
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn substeps(tau: f64, step: f64) -> Result<usize> {
    if !(tau > 0.0 && step > 0.0) {
        return Err(Error::Domain("sampling time and step must be positive".into()));
    }
    let ratio = tau / step;
    let count = ratio.round();
    if count < 1.0 || (ratio - count).abs() > 1e-9 * ratio.max(1.0) {
        return Err(Error::Domain(format!("step {step} does not divide sampling time {tau}")));
    }
    Ok(count as usize)
}

fn rk4_step(
    sys: &dyn NonlinearSystem,
    x: &mut [f64],
    u: &[f64],
    h: f64,
    scratch: &mut [Vec<f64>; 5],
) -> Result<()> {
    let n = x.len();
    let [k1, k2, k3, k4, tmp] = scratch;
    sys.derivative(x, u, k1)?;
    for i in 0..n {
        tmp[i] = x[i] + 0.5 * h * k1[i];
    }
    sys.derivative(tmp, u, k2)?;
    for i in 0..n {
        tmp[i] = x[i] + 0.5 * h * k2[i];
    }
    sys.derivative(tmp, u, k3)?;
    for i in 0..n {
        tmp[i] = x[i] + h * k3[i];
    }
    sys.derivative(tmp, u, k4)?;
    for i in 0..n {
        x[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
    Ok(())
}

fn check_divergence(x: &[f64], time: f64) -> Result<()> {
    let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    if !norm.is_finite() || norm > DIVERGENCE_THRESHOLD {
        return Err(Error::Divergence { time });
    }
    Ok(())
}

/// Fixed-step RK4 with the input held constant over each sampling interval
/// `inputs[k]`. `step` must divide `tau`.
pub fn simulate_nonlinear(
    sys: &dyn NonlinearSystem,
    x0: &[f64],
    inputs: &[Vec<f64>],
    tau: f64,
    step: f64,
) -> Result<Trajectory> {
    let n = sys.state_dim();
    let sub = substeps(tau, step)?;
    let h = tau / sub as f64;
    if x0.len() != n {
        return Err(Error::DimensionMismatch("simulate: initial state".into()));
    }
    let mut scratch: [Vec<f64>; 5] = std::array::from_fn(|_| vec![0.0; n]);
    let mut x = x0.to_vec();
    let mut traj = Trajectory {
        times: Vec::with_capacity(inputs.len() + 1),
        states: Vec::with_capacity(inputs.len() + 1),
        inputs: inputs.to_vec(),
        outputs: Vec::with_capacity(inputs.len()),
    };
    traj.times.push(0.0);
    traj.states.push(x.clone());
    let mut y = vec![0.0; sys.output_dim()];
    for (k, u) in inputs.iter().enumerate() {
        if u.len() != sys.input_dim() {
            return Err(Error::DimensionMismatch(format!("simulate: input {k}")));
        }
        sys.output(&x, u, &mut y)?;
        traj.outputs.push(y.clone());
        for s in 0..sub {
            rk4_step(sys, &mut x, u, h, &mut scratch)?;
            check_divergence(&x, k as f64 * tau + (s + 1) as f64 * h)?;
        }
        traj.times.push((k + 1) as f64 * tau);
        traj.states.push(x.clone());
    }
    Ok(traj)
}

/// Closed loop `u = u_op - K x_bar + d` around the operating point of `lin`.
/// The returned trajectory is in deviation coordinates: states `x_bar`,
/// inputs `u_bar = -K x_bar + d`, outputs `h(x, u) - y_op`.
pub fn simulate_closed_loop(
    sys: &dyn NonlinearSystem,
    lin: &DiscreteLinearModel,
    gain: &DMatrix<f64>,
    x_bar0: &[f64],
    disturbance: &[Vec<f64>],
    step: f64,
) -> Result<Trajectory> {
    let n = sys.state_dim();
    let nu = sys.input_dim();
    let tau = lin.tau;
    let sub = substeps(tau, step)?;
    let h = tau / sub as f64;
    let mut scratch: [Vec<f64>; 5] = std::array::from_fn(|_| vec![0.0; n]);
    let mut x: Vec<f64> = x_bar0.iter().zip(&lin.x_op).map(|(a, b)| a + b).collect();
    let mut traj = Trajectory {
        times: vec![0.0],
        states: vec![x_bar0.to_vec()],
        inputs: Vec::with_capacity(disturbance.len()),
        outputs: Vec::with_capacity(disturbance.len()),
    };
    let mut y = vec![0.0; sys.output_dim()];
    let mut u = vec![0.0; nu];
    for (k, d) in disturbance.iter().enumerate() {
        let x_bar: Vec<f64> = x.iter().zip(&lin.x_op).map(|(a, b)| a - b).collect();
        let fb = gain * vector(&x_bar);
        let u_bar: Vec<f64> = (0..nu).map(|i| d[i] - fb[i]).collect();
        for i in 0..nu {
            u[i] = lin.u_op[i] + u_bar[i];
        }
        sys.output(&x, &u, &mut y)?;
        traj.outputs.push(y.iter().zip(&lin.y_op).map(|(a, b)| a - b).collect());
        traj.inputs.push(u_bar);
        for s in 0..sub {
            rk4_step(sys, &mut x, &u, h, &mut scratch)?;
            check_divergence(&x, k as f64 * tau + (s + 1) as f64 * h)?;
        }
        traj.times.push((k + 1) as f64 * tau);
        traj.states.push(x.iter().zip(&lin.x_op).map(|(a, b)| a - b).collect());
    }
    Ok(traj)
}

/// Discrete LFT simulation: at each step solve the `theta = Delta phi` loop
/// exactly, then advance the state. Dynamic blocks are held at zero.
pub fn simulate_lft(
    lft: &LftSystem,
    parameters: &[Vec<f64>],
    inputs: &[Vec<f64>],
    x0: &[f64],
) -> Result<Trajectory> {
    let n = lft.n_states;
    let nu = lft.n_inputs;
    let ny = lft.n_outputs;
    let r = lft.parameter_channels();
    if parameters.len() != inputs.len() {
        return Err(Error::DimensionMismatch(
            "simulate_lft: parameter and input trajectories differ in length".into(),
        ));
    }
    let rows_phi = n..n + r;
    let cols_theta = n..n + r;
    let col_u = n + lft.delta_cols();
    let row_y = n + lft.delta_rows();
    let g = &lft.g;
    let a_ps = g.view((rows_phi.start, 0), (r, n)).into_owned();
    let a_pp = g.view((rows_phi.start, cols_theta.start), (r, r)).into_owned();
    let b_p = g.view((rows_phi.start, col_u), (r, nu)).into_owned();
    let a_ss = g.view((0, 0), (n, n)).into_owned();
    let a_sp = g.view((0, cols_theta.start), (n, r)).into_owned();
    let b_s = g.view((0, col_u), (n, nu)).into_owned();
    let c_s = g.view((row_y, 0), (ny, n)).into_owned();
    let c_p = g.view((row_y, cols_theta.start), (ny, r)).into_owned();
    let d = g.view((row_y, col_u), (ny, nu)).into_owned();

    let mut x = vector(x0);
    let mut traj = Trajectory {
        times: vec![0.0],
        states: vec![x0.to_vec()],
        inputs: inputs.to_vec(),
        outputs: Vec::with_capacity(inputs.len()),
    };
    let eye = DMatrix::<f64>::identity(r, r);
    for (k, (rho, u)) in parameters.iter().zip(inputs).enumerate() {
        let u = vector(u);
        let theta = if r == 0 {
            DVector::zeros(0)
        } else {
            let delta = DMatrix::from_diagonal(&lft.delta_diagonal(rho)?);
            let lhs = &eye - &delta * &a_pp;
            let rhs = &delta * (&a_ps * &x + &b_p * &u);
            lhs.lu().solve(&rhs).ok_or(Error::AlgebraicLoop { step: k })?
        };
        let y = &c_s * &x + &c_p * &theta + &d * &u;
        x = &a_ss * &x + &a_sp * &theta + &b_s * &u;
        traj.outputs.push(y.as_slice().to_vec());
        traj.times.push((k + 1) as f64);
        traj.states.push(x.as_slice().to_vec());
    }
    Ok(traj)
}

/// Direct recursion `x+ = A(rho) x + B(rho) u`, `y = C(rho) x + D(rho) u`.
pub fn simulate_lpv(
    lpv: &LpvModel,
    parameters: &[Vec<f64>],
    inputs: &[Vec<f64>],
    x0: &[f64],
) -> Result<Trajectory> {
    let n = lpv.state_dim();
    let mut x = vector(x0);
    let mut traj = Trajectory {
        times: vec![0.0],
        states: vec![x0.to_vec()],
        inputs: inputs.to_vec(),
        outputs: Vec::with_capacity(inputs.len()),
    };
    for (k, (rho, u)) in parameters.iter().zip(inputs).enumerate() {
        let m = lpv.evaluate(rho)?;
        let z = DVector::from_iterator(n + u.len(), x.iter().copied().chain(u.iter().copied()));
        let out = m * z;
        traj.outputs.push(out.rows(n, out.len() - n).iter().copied().collect());
        x = out.rows(0, n).into_owned();
        traj.times.push((k + 1) as f64);
        traj.states.push(x.as_slice().to_vec());
    }
    Ok(traj)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{LinearSystem, Pendulum};

    #[test]
    fn zero_dynamics_stay_constant() {
        let sys = LinearSystem::new(DMatrix::zeros(2, 2), DMatrix::zeros(2, 1));
        let traj = simulate_nonlinear(&sys, &[1.5, -2.0], &vec![vec![0.3]; 50], 0.1, 0.01).unwrap();
        assert!(traj.states.iter().all(|s| s == &vec![1.5, -2.0]));
    }

    #[test]
    fn exponential_decay_accuracy() {
        let sys = LinearSystem::new(DMatrix::from_element(1, 1, -1.0), DMatrix::zeros(1, 1));
        let traj = simulate_nonlinear(&sys, &[1.0], &[vec![0.0]], 1.0, 1e-3).unwrap();
        assert!((traj.states[1][0] - (-1.0f64).exp()).abs() < 1e-8);
    }

    #[test]
    fn undamped_pendulum_conserves_energy() {
        let p = Pendulum { gravity_over_length: 9.81, damping: 0.0, drag: 0.0 };
        let x0 = [0.8, 0.5];
        let traj = simulate_nonlinear(&p, &x0, &vec![vec![0.0]; 1000], 0.01, 1e-3).unwrap();
        let e0 = p.energy(&x0);
        let drift = traj
            .states
            .iter()
            .map(|s| (p.energy(s) - e0).abs() / e0)
            .fold(0.0, f64::max);
        assert!(drift < 1e-6, "relative energy drift {drift}");
    }

    #[test]
    fn divergence_reports_time() {
        let sys = LinearSystem::new(DMatrix::from_element(1, 1, 50.0), DMatrix::zeros(1, 1));
        match simulate_nonlinear(&sys, &[1.0], &vec![vec![0.0]; 100], 0.1, 0.01) {
            Err(Error::Divergence { time }) => assert!(time > 0.3 && time < 0.5, "{time}"),
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn step_must_divide_tau() {
        let sys = LinearSystem::new(DMatrix::zeros(1, 1), DMatrix::zeros(1, 1));
        assert!(simulate_nonlinear(&sys, &[0.0], &[vec![0.0]], 0.1, 0.03).is_err());
    }

    #[test]
    fn trajectory_csv_header() {
        let sys = LinearSystem::new(DMatrix::zeros(1, 1), DMatrix::zeros(1, 1));
        let traj = simulate_nonlinear(&sys, &[1.0], &[vec![0.0]], 0.5, 0.5).unwrap();
        let mut buf = Vec::new();
        traj.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().next().unwrap(), "time,x1,u1,y1");
        assert_eq!(text.lines().count(), 2);
    }
}
