mod common;

use lftgen::dynamics::{DiscreteLinearModel, NonlinearSystem, VanDerPol};
use lftgen::envelope::Hyperrectangle;
use lftgen::sysid::{
    build_basis, graded_lex_cmp, identify, BasisSpec, Exponents, IdentifyOptions, StandardizedProblem,
};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::Rng;

use common::{rng, vanderpol_pnlss};

/// Every exponent vector with `2 <= |e| <= p` and the per-variable caps, by brute force.
fn enumerate(n_vars: usize, p: u32, caps: &[u32]) -> Vec<Exponents> {
    let mut out = Vec::new();
    let mut e = vec![0u32; n_vars];
    loop {
        let deg: u32 = e.iter().sum();
        if (2..=p).contains(&deg) {
            out.push(e.clone());
        }
        let mut i = 0;
        loop {
            if i == n_vars {
                return out;
            }
            e[i] += 1;
            if e[i] <= caps[i].min(p) {
                break;
            }
            e[i] = 0;
            i += 1;
        }
    }
}

#[test]
fn three_variables_cubic_has_sixteen_monomials() {
    let basis = build_basis(&BasisSpec {
        n_vars: 3,
        max_degree: 3,
        variable_caps: None,
        state_subsets: vec![vec![0, 1, 2]],
        output_subsets: vec![],
    })
    .unwrap();
    assert_eq!(basis.state_blocks[0].len(), 16);
    assert_eq!(enumerate(3, 3, &[3, 3, 3]).len(), 16);
}

#[test]
fn van_der_pol_cubic_coefficient_follows_the_euler_term() {
    let model = vanderpol_pnlss();
    let (mu, tau) = (1.0, 0.01);
    let block = &model.state_blocks[1];
    let c = block
        .active()
        .find(|(e, _)| e.as_slice() == [2, 1, 0])
        .map(|(_, c)| c)
        .expect("x1^2 x2 is retained");
    let expected = -mu * tau;
    assert!(((c - expected) / expected).abs() < 0.05, "coefficient {c:e} vs {expected:e}");
}

#[test]
fn van_der_pol_sweep_is_monotone() {
    let sys = VanDerPol { mu: 1.0 };
    let lin = DiscreteLinearModel::from_system(&sys, &[0.0, 0.0], &[0.0], 0.01).unwrap();
    let env = Hyperrectangle::new(
        vec![-1.5, -1.5, -1.0],
        vec![1.5, 1.5, 1.0],
        vec!["x1".into(), "x2".into(), "u".into()],
    )
    .unwrap();
    let basis = build_basis(&BasisSpec {
        n_vars: 3,
        max_degree: 3,
        variable_caps: None,
        state_subsets: sys.equation_variables(),
        output_subsets: vec![],
    })
    .unwrap();
    let id = identify(&sys, &lin, &env, &basis, &IdentifyOptions::default()).unwrap();
    for sweep in &id.sweeps {
        for w in sweep.points.windows(2) {
            assert!(w[1].support <= w[0].support, "{}: support grows {:?}", sweep.equation, sweep.points);
            assert!(
                w[1].fit_error >= w[0].fit_error * (1.0 - 1e-9),
                "{}: fit error drops from {} to {}",
                sweep.equation,
                w[0].fit_error,
                w[1].fit_error
            );
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 48, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn basis_matches_enumeration(n_vars in 1usize..5, p in 2u32..5, caps in prop::collection::vec(0u32..5, 4), capped in any::<bool>()) {
        let caps = &caps[..n_vars];
        let spec = BasisSpec {
            n_vars,
            max_degree: p,
            variable_caps: capped.then(|| caps.to_vec()),
            state_subsets: vec![(0..n_vars).collect()],
            output_subsets: vec![],
        };
        let basis = build_basis(&spec).unwrap();
        let block = &basis.state_blocks[0];
        let effective = if capped { caps.to_vec() } else { vec![p; n_vars] };
        let mut expected = enumerate(n_vars, p, &effective);
        expected.sort_by(|a, b| graded_lex_cmp(a, b));
        prop_assert_eq!(block, &expected);
    }

    #[test]
    fn lasso_solution_satisfies_optimality(seed in any::<u64>(), frac in 0.01f64..0.9) {
        let mut r = rng(seed);
        let theta = DMatrix::from_fn(40, 6, |_, _| r.random::<f64>() - 0.5);
        let y = DVector::from_fn(40, |_, _| r.random::<f64>() - 0.5);
        let problem = StandardizedProblem::new(&theta, &y).unwrap();
        let sigma = frac * problem.sigma_max();
        let (beta, _) = problem.solve(sigma, None).unwrap();
        let c = problem.residual_correlation(&beta);
        let tol = 1e-4 * problem.sigma_max();
        for j in 0..beta.len() {
            if beta[j] != 0.0 {
                prop_assert!((c[j] - sigma * beta[j].signum()).abs() < tol, "active {j}: {} vs {}", c[j], sigma);
            } else {
                prop_assert!(c[j].abs() <= sigma + tol, "inactive {j}: {} > {}", c[j], sigma);
            }
        }
    }
}
