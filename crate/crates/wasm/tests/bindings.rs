use lftgen::envelope::{halton_sample, ml2_discrepancy, Hyperrectangle};
use lftgen_wasm::{discrepancy_curves, first_order_response, pendulum_swing};

#[test]
fn halton_covers_better_than_random() {
    let out = discrepancy_curves(2, 256, 3).unwrap();
    let (halton, random) = out.split_at(256);
    let unit = Hyperrectangle::new(vec![0.0; 2], vec![1.0; 2], vec!["a".into(), "b".into()]).unwrap();
    let direct = ml2_discrepancy(&halton_sample(2, 256, &unit, 1).unwrap()).unwrap();
    assert!((halton[255] - direct).abs() < 1e-9, "{} vs {direct}", halton[255]);
    assert!(halton[255] < random[255]);
    assert!(halton.iter().chain(random).all(|v| v.is_finite() && *v >= 0.0));
}

#[test]
fn small_swings_agree_with_the_linearization() {
    let steps = 200;
    let small = pendulum_swing(0.01, 0.0, 0.01, steps).unwrap();
    let large = pendulum_swing(1.5, 0.0, 0.01, steps).unwrap();
    let gap = |v: &[f64]| (0..=steps).map(|i| (v[i] - v[steps + 1 + i]).abs()).fold(0.0, f64::max);
    assert_eq!(small.len(), 2 * (steps + 1));
    assert!(gap(&small) / 0.01 < 0.02);
    assert!(gap(&large) / 1.5 > 0.05);
}

#[test]
fn first_order_peak_is_analytic() {
    let (a, c) = (0.7, 2.0);
    let out = first_order_response(a, c, 0.01, 128).unwrap();
    let norm = out[out.len() - 2];
    assert!((norm - c / (1.0 - a)).abs() < 1e-9);
    let n = (out.len() - 2) / 2;
    let peak_on_grid = out[n..2 * n].iter().cloned().fold(0.0, f64::max);
    assert!(norm >= peak_on_grid);

    // With a < 0 the peak sits at Nyquist, z = -1.
    let out = first_order_response(-0.5, 1.0, 0.01, 128).unwrap();
    assert!((out[out.len() - 2] - 2.0).abs() < 1e-9);
}
