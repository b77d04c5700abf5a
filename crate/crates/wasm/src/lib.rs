//! Browser bindings for three small interactive views of the library.
//!
//! Every function returns flat `f64` arrays so the page can plot them without
//! a serialization layer.

use lftgen::analysis::{frequency_grid, hinf_norm, StateSpace};
use lftgen::dynamics::{simulate_nonlinear, DiscreteLinearModel, Pendulum};
use lftgen::envelope::{halton_sample, Hyperrectangle, Ml2Accumulator};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use wasm_bindgen::prelude::*;

fn js_error(e: lftgen::Error) -> JsError {
    JsError::new(&e.to_string())
}

/// Running ML2 discrepancy of the first `k` points, `k = 1..=count`, for the
/// Halton sequence followed by uniform random points: `[halton..., random...]`.
#[wasm_bindgen]
pub fn discrepancy_curves(dim: usize, count: usize, seed: u64) -> Result<Vec<f64>, JsError> {
    let unit = Hyperrectangle::new(vec![0.0; dim], vec![1.0; dim], (1..=dim).map(|i| format!("z{i}")).collect())
        .map_err(js_error)?;
    let halton = halton_sample(dim, count, &unit, 1).map_err(js_error)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let random: Vec<Vec<f64>> = (0..count).map(|_| (0..dim).map(|_| rng.random()).collect()).collect();
    let mut out = Vec::with_capacity(2 * count);
    for points in [&halton, &random] {
        let mut acc = Ml2Accumulator::new(dim);
        for (k, p) in points.iter().enumerate() {
            let cross = Ml2Accumulator::cross_sum(&points[..k], std::slice::from_ref(p));
            acc.add_block(std::slice::from_ref(p), Ml2Accumulator::kernel(p, p), Some(cross));
            out.push(acc.value());
        }
    }
    Ok(out)
}

/// Free pendulum from `(theta0, omega0)` for `steps` samples of `tau`:
/// `[theta_nonlinear..., theta_linear...]`, each `steps + 1` long.
#[wasm_bindgen]
pub fn pendulum_swing(theta0: f64, omega0: f64, tau: f64, steps: usize) -> Result<Vec<f64>, JsError> {
    let sys = Pendulum::default();
    let lin = DiscreteLinearModel::from_system(&sys, &[0.0, 0.0], &[0.0], tau).map_err(js_error)?;
    let inputs = vec![vec![0.0]; steps];
    let nl = simulate_nonlinear(&sys, &[theta0, omega0], &inputs, tau, tau / 20.0).map_err(js_error)?;
    let mut out: Vec<f64> = nl.states.iter().map(|x| x[0]).collect();
    let mut x = DVector::from_column_slice(&[theta0, omega0]);
    out.push(x[0]);
    for _ in 0..steps {
        x = &lin.a * x;
        out.push(x[0]);
    }
    Ok(out)
}

/// Gain of `c / (z - a)` on the analysis grid, followed by its H-infinity
/// norm and peak frequency: `[omega..., gain..., norm, peak]`.
#[wasm_bindgen]
pub fn first_order_response(a: f64, c: f64, tau: f64, points: usize) -> Result<Vec<f64>, JsError> {
    let sys = StateSpace {
        a: DMatrix::from_element(1, 1, a),
        b: DMatrix::from_element(1, 1, 1.0),
        c: DMatrix::from_element(1, 1, c),
        d: DMatrix::zeros(1, 1),
        tau,
    };
    let result = hinf_norm(&sys, 1e-6, points).map_err(js_error)?;
    let grid = frequency_grid(points, tau);
    let gains: Vec<f64> = grid.iter().map(|&w| sys.gain(w)).collect();
    let mut out = grid;
    out.extend(gains);
    out.extend([result.norm, result.frequency]);
    Ok(out)
}
