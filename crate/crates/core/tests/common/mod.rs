#![allow(dead_code)]

use lftgen::dynamics::{DiscreteLinearModel, NonlinearSystem, VanDerPol};
use lftgen::envelope::Hyperrectangle;
use lftgen::pipeline::PipelineConfig;
use lftgen::sysid::{assemble_pnlss, build_basis, identify, BasisSpec, IdentifyOptions, PnlssModel};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn pendulum_envelope() -> Hyperrectangle {
    PipelineConfig::pendulum().envelope().unwrap()
}

pub fn pendulum_pnlss() -> PnlssModel {
    let cfg = PipelineConfig::pendulum();
    let sys = cfg.system.instantiate().unwrap();
    let lin = DiscreteLinearModel::from_system(sys.as_ref(), &[0.0, 0.0], &[0.0], cfg.tau).unwrap();
    let env = cfg.envelope().unwrap();
    let basis = build_basis(&BasisSpec {
        n_vars: 3,
        max_degree: cfg.basis.max_degree,
        variable_caps: cfg.basis.variable_caps.clone(),
        state_subsets: sys.equation_variables(),
        output_subsets: vec![],
    })
    .unwrap();
    identify(sys.as_ref(), &lin, &env, &basis, &cfg.identify).unwrap().model
}

pub fn vanderpol_pnlss() -> PnlssModel {
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
    identify(&sys, &lin, &env, &basis, &IdentifyOptions::default()).unwrap().model
}

/// Random stable linear part with a full random polynomial residual.
pub fn synthetic_pnlss(seed: u64, n: usize, nu: usize, degree: u32) -> PnlssModel {
    let mut r = rng(seed);
    let a = DMatrix::from_fn(n, n, |i, j| if i == j { 0.5 } else { 0.0 } + 0.3 * (r.random::<f64>() - 0.5));
    let b = DMatrix::from_fn(n, nu, |_, _| r.random::<f64>() - 0.5);
    let lin = DiscreteLinearModel {
        a,
        b,
        c: DMatrix::identity(n, n),
        d: DMatrix::zeros(n, nu),
        tau: 0.1,
        x_op: vec![0.0; n],
        u_op: vec![0.0; nu],
        y_op: vec![0.0; n],
    };
    let dim = n + nu;
    let lower: Vec<f64> = (0..dim).map(|_| -0.5 - r.random::<f64>()).collect();
    let upper: Vec<f64> = (0..dim).map(|_| 0.5 + r.random::<f64>()).collect();
    let labels = (1..=dim).map(|i| format!("z{i}")).collect();
    let env = Hyperrectangle::new(lower, upper, labels).unwrap();
    let basis = build_basis(&BasisSpec {
        n_vars: dim,
        max_degree: degree,
        variable_caps: None,
        state_subsets: vec![(0..dim).collect(); n],
        output_subsets: vec![],
    })
    .unwrap();
    let coefficients = basis
        .state_blocks
        .iter()
        .map(|block| {
            block
                .iter()
                .map(|_| if r.random::<f64>() < 0.6 { r.random::<f64>() - 0.5 } else { 0.0 })
                .collect()
        })
        .collect();
    assemble_pnlss(lin, &basis, coefficients, vec![], env, vec![0.0; n]).unwrap()
}

pub fn uniform_in(r: &mut ChaCha8Rng, bounds: &[[f64; 2]]) -> Vec<f64> {
    bounds.iter().map(|b| b[0] + r.random::<f64>() * (b[1] - b[0])).collect()
}

pub fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}
