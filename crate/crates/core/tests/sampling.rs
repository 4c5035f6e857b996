//! Statistical checks of the scenario samplers against analytic moments.

use liquidation_core::model::{MarkMeasure, RegimeGenerator};
use liquidation_core::rng::scenario_rng;
use liquidation_core::simulate::{sample_fills, sample_regime_path};
use liquidation_core::stats::summarize;

const PATHS: u64 = 100_000;

#[test]
fn two_state_chain_switch_count() {
    // symmetric chain with unit rates: switches form a Poisson process of rate 1
    let gen = RegimeGenerator::new(vec![vec![-1.0, 1.0], vec![1.0, -1.0]]).unwrap();
    let counts: Vec<f64> =
        (0..PATHS).map(|k| sample_regime_path(&gen, 0, 1.0, &mut scenario_rng(11, k)).switches() as f64).collect();
    let s = summarize(&counts);
    assert!((s.mean - 1.0).abs() <= 3.0 * s.std_error, "mean {} se {}", s.mean, s.std_error);
}

#[test]
fn switch_targets_follow_rates() {
    // from state 0 jump to 1 w.p. 1/4 and to 2 w.p. 3/4
    let gen = RegimeGenerator::new(vec![vec![-4.0, 1.0, 3.0], vec![0.0, 0.0, 0.0], vec![0.0, 0.0, 0.0]]).unwrap();
    let hits: Vec<f64> = (0..PATHS)
        .filter_map(|k| {
            let p = sample_regime_path(&gen, 0, 10.0, &mut scenario_rng(12, k));
            (p.switches() == 1).then(|| f64::from(u8::from(p.states()[1] == 1)))
        })
        .collect();
    let s = summarize(&hits);
    assert!((s.mean - 0.25).abs() <= 3.0 * s.std_error);
}

#[test]
fn fill_count_is_poisson() {
    let nu = MarkMeasure::new(vec!["dark".into()], vec![2.0]).unwrap();
    let counts: Vec<f64> = (0..PATHS).map(|k| sample_fills(&nu, 1.0, &mut scenario_rng(13, k)).len() as f64).collect();
    let s = summarize(&counts);
    assert!((s.mean - 2.0).abs() <= 3.0 * s.std_error);
    // Poisson: variance equals the mean
    assert!((s.variance - 2.0).abs() < 0.05);
}

#[test]
fn fill_marks_are_categorical() {
    let nu = MarkMeasure::new(vec!["a".into(), "b".into()], vec![1.0, 3.0]).unwrap();
    let mut marks = Vec::new();
    for k in 0..PATHS / 4 {
        let f = sample_fills(&nu, 1.0, &mut scenario_rng(14, k));
        assert!(f.times().windows(2).all(|w| w[0] < w[1]));
        assert!(f.times().iter().all(|t| (0.0..1.0).contains(t)));
        marks.extend(f.marks().iter().map(|&m| f64::from(u8::from(m == 1))));
    }
    let s = summarize(&marks);
    assert!((s.mean - 0.75).abs() <= 3.0 * s.std_error);
}
