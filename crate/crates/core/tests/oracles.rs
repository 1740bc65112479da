mod support;

use support::oracles::oracle_suite;

#[test]
fn library_matches_loop_oracles() {
    let results = oracle_suite(50);
    let failures: Vec<_> = results
        .iter()
        .filter(|r| !r.passed())
        .map(|r| format!("{}: {:e} > {:e}", r.name, r.worst, r.tol))
        .collect();
    assert!(failures.is_empty(), "{failures:?}");
}
