mod common;

use lftgen::envelope::{
    denormalize_from_unit, halton_sample, ml2_discrepancy, normalize_to_unit, Hyperrectangle, Ml2Accumulator,
    ParameterSet,
};
use proptest::prelude::*;
use rand::Rng;

use common::{median, rng};

fn unit_box(dim: usize) -> Hyperrectangle {
    Hyperrectangle::new(vec![0.0; dim], vec![1.0; dim], (0..dim).map(|i| format!("t{i}")).collect()).unwrap()
}

#[test]
fn halton_beats_pseudorandom_in_the_square() {
    let halton = halton_sample(2, 1000, &unit_box(2), 1).unwrap();
    let d_halton = ml2_discrepancy(&halton).unwrap();
    let mut r = rng(48);
    let random: Vec<f64> = (0..20)
        .map(|_| {
            let pts: Vec<Vec<f64>> = (0..1000).map(|_| vec![r.random(), r.random()]).collect();
            ml2_discrepancy(&pts).unwrap()
        })
        .collect();
    let d_random = median(random);
    assert!(d_halton < d_random, "halton {d_halton:.3e} vs random median {d_random:.3e}");
}

#[test]
fn normalization_round_trip() {
    let bounds = Hyperrectangle::new(
        vec![-1.0, -2.0, -0.5],
        vec![1.0, 2.0, 3.0],
        vec!["a".into(), "b".into(), "c".into()],
    )
    .unwrap();
    let mut r = rng(68);
    let pts: Vec<Vec<f64>> = (0..100)
        .map(|_| (0..3).map(|k| bounds.lower[k] + r.random::<f64>() * (bounds.upper[k] - bounds.lower[k])).collect())
        .collect();
    let back = denormalize_from_unit(&normalize_to_unit(&pts, &bounds).unwrap(), &bounds).unwrap();
    let err = pts.iter().flatten().zip(back.iter().flatten()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    assert!(err < 1e-12, "round trip error {err:e}");
}

fn cloud(dim: usize, max: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(prop::collection::vec(0.0f64..=1.0, dim), 1..max)
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn ml2_ignores_point_order(pts in cloud(3, 30), seed in any::<u64>()) {
        use rand::seq::SliceRandom;
        let mut shuffled = pts.clone();
        shuffled.shuffle(&mut rng(seed));
        let a = ml2_discrepancy(&pts).unwrap();
        let b = ml2_discrepancy(&shuffled).unwrap();
        prop_assert!((a - b).abs() <= 1e-12 * a.max(1.0));
        prop_assert!(a.is_finite() && a >= 0.0);
    }

    #[test]
    fn ml2_with_duplicates_is_finite(pts in cloud(2, 10)) {
        let mut doubled = pts.clone();
        doubled.extend(pts.iter().cloned());
        let v = ml2_discrepancy(&doubled).unwrap();
        prop_assert!(v.is_finite() && v >= 0.0);
    }

    #[test]
    fn incremental_accumulation_matches_batch(pts in cloud(2, 40), cut in 0.0f64..1.0) {
        let k = ((cut * pts.len() as f64) as usize).clamp(1, pts.len());
        let (head, tail) = pts.split_at(k);
        let mut acc = Ml2Accumulator::from_points(head).unwrap();
        if !tail.is_empty() {
            let own = Ml2Accumulator::cross_sum(tail, tail);
            let cross = Ml2Accumulator::cross_sum(head, tail);
            acc.add_block(tail, own, Some(cross));
        }
        let batch = ml2_discrepancy(&pts).unwrap();
        prop_assert!((acc.value() - batch).abs() <= 1e-10 * batch.max(1e-3));
    }

    #[test]
    fn halton_is_deterministic_and_skip_shifts_the_sequence(dim in 1usize..8, count in 1usize..50, skip in 0u64..100) {
        let bounds = unit_box(dim);
        let a = halton_sample(dim, count, &bounds, skip).unwrap();
        prop_assert_eq!(&a, &halton_sample(dim, count, &bounds, skip).unwrap());
        let long = halton_sample(dim, count + skip as usize, &bounds, 0).unwrap();
        prop_assert_eq!(&a[..], &long[skip as usize..]);
        prop_assert!(a.iter().flatten().all(|t| (0.0..1.0).contains(t)));
    }

    #[test]
    fn rate_bounds_within_width_are_accepted(lo in -5.0f64..0.0, width in 0.01f64..5.0, frac in 0.0f64..=1.0) {
        let r = frac * width;
        prop_assert!(ParameterSet::new(vec![[lo, lo + width]], vec![[-r, r]]).is_ok());
        prop_assert!(ParameterSet::new(vec![[lo, lo + width]], vec![[-r, 1.01 * width]]).is_err());
    }
}
