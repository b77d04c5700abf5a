mod common;

use lftgen::dynamics::{discretize_zoh, lqr_state_feedback, simulate_lft, simulate_lpv, simulate_nonlinear, LinearSystem};
use lftgen::linalg::{max_abs_diff, spectral_radius};
use lftgen::lpvlft::{active_priority, factorize, lft_realize};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use common::{rng, synthetic_pnlss, uniform_in};

/// `V diag(lambda) V^-1` with real negative eigenvalues and a well-conditioned `V`.
fn stable_by_eigen(r: &mut ChaCha8Rng, n: usize) -> (DMatrix<f64>, DMatrix<f64>, DVector<f64>) {
    let lambda = DVector::from_fn(n, |_, _| -0.1 - 2.9 * r.random::<f64>());
    let v = DMatrix::identity(n, n) + DMatrix::from_fn(n, n, |_, _| 0.4 * (r.random::<f64>() - 0.5));
    let a = &v * DMatrix::from_diagonal(&lambda) * v.clone().try_inverse().unwrap();
    (a, v, lambda)
}

#[test]
fn zoh_matches_eigendecomposition() {
    let mut r = rng(132);
    for _ in 0..20 {
        let (a, v, lambda) = stable_by_eigen(&mut r, 3);
        let b = DMatrix::from_fn(3, 2, |_, _| r.random::<f64>() - 0.5);
        let tau = 0.01 + 0.5 * r.random::<f64>();
        let vinv = v.clone().try_inverse().unwrap();
        let ad_ref = &v * DMatrix::from_diagonal(&lambda.map(|l| (l * tau).exp())) * &vinv;
        let phi = lambda.map(|l| ((l * tau).exp() - 1.0) / l);
        let bd_ref = &v * DMatrix::from_diagonal(&phi) * &vinv * &b;
        let (ad, bd) = discretize_zoh(&a, &b, tau).unwrap();
        assert!(max_abs_diff(&ad, &ad_ref) < 1e-9, "A_d gap {:e}", max_abs_diff(&ad, &ad_ref));
        assert!(max_abs_diff(&bd, &bd_ref) < 1e-9, "B_d gap {:e}", max_abs_diff(&bd, &bd_ref));
    }
}

#[test]
fn lqr_stabilizes_random_pairs() {
    let mut r = rng(162);
    for trial in 0..50 {
        let n = 2 + trial % 3;
        let nu = 1 + trial % 2;
        let a = DMatrix::from_fn(n, n, |_, _| 1.6 * (r.random::<f64>() - 0.5));
        let b = DMatrix::from_fn(n, nu, |_, _| r.random::<f64>() - 0.5);
        let k = lqr_state_feedback(&a, &b, &DMatrix::identity(n, n), &DMatrix::identity(nu, nu)).unwrap();
        let rho = spectral_radius(&(&a - &b * &k));
        assert!(rho < 1.0, "trial {trial}: closed-loop spectral radius {rho}");
    }
}

#[test]
fn lft_simulation_matches_lpv_recursion() {
    for (seed, n, nu, p) in [(151u64, 2, 1, 3), (152, 3, 1, 3), (153, 3, 2, 2)] {
        let model = synthetic_pnlss(seed, n, nu, p);
        let lpv = factorize(&model, &active_priority(&model)).unwrap();
        let lft = lft_realize(&lpv).unwrap();
        let bounds = lpv.parameter_set.value_bounds.clone();
        let mut r = rng(seed);
        let mut worst = 0.0f64;
        for _ in 0..40 {
            let steps = 30;
            let rho: Vec<Vec<f64>> = (0..steps).map(|_| uniform_in(&mut r, &bounds)).collect();
            let u: Vec<Vec<f64>> = (0..steps).map(|_| (0..nu).map(|_| r.random::<f64>() - 0.5).collect()).collect();
            let x0: Vec<f64> = (0..n).map(|_| r.random::<f64>() - 0.5).collect();
            let a = simulate_lft(&lft, &rho, &u, &x0).unwrap();
            let b = simulate_lpv(&lpv, &rho, &u, &x0).unwrap();
            for (sa, sb) in a.states.iter().chain(&a.outputs).zip(b.states.iter().chain(&b.outputs)) {
                for (x, y) in sa.iter().zip(sb) {
                    worst = worst.max((x - y).abs() / (1.0 + y.abs()));
                }
            }
        }
        assert!(worst < 1e-9, "seed {seed}: LFT vs LPV gap {worst:e}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 16, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn zoh_is_exact_for_linear_dynamics(seed in any::<u64>(), tau in 0.005f64..0.2) {
        let mut r = rng(seed);
        let (a, _, _) = stable_by_eigen(&mut r, 3);
        let b = DMatrix::from_fn(3, 1, |_, _| r.random::<f64>() - 0.5);
        let (ad, bd) = discretize_zoh(&a, &b, tau).unwrap();
        let inputs: Vec<Vec<f64>> = (0..50).map(|_| vec![2.0 * (r.random::<f64>() - 0.5)]).collect();
        let x0 = vec![0.3, -0.2, 0.1];
        let traj = simulate_nonlinear(&LinearSystem::new(a, b), &x0, &inputs, tau, tau / 20.0).unwrap();
        let mut x = DVector::from_column_slice(&x0);
        for (k, u) in inputs.iter().enumerate() {
            x = &ad * &x + &bd * DVector::from_column_slice(u);
            for i in 0..3 {
                prop_assert!((traj.states[k + 1][i] - x[i]).abs() < 1e-9);
            }
        }
    }
}
