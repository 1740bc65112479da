mod support;

use support::{gradient_suite, sr_head_gradient, GRADIENT_CASES};

const SEEDS: u64 = 20;
const TOL: f64 = 1e-4;

#[test]
fn every_primitive_matches_finite_differences() {
    let results = gradient_suite(SEEDS);
    assert_eq!(results.len(), GRADIENT_CASES.len());
    let failures: Vec<_> = results.iter().filter(|(_, e)| !(*e < TOL)).collect();
    assert!(failures.is_empty(), "gradient mismatches: {failures:?}");
}

#[test]
fn sr_head_gradient_matches_finite_differences() {
    for seed in 0..3 {
        let err = sr_head_gradient(seed);
        assert!(err < 1e-3, "seed {seed}: relative error {err}");
    }
}
