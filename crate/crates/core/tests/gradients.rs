mod gradient_suite;

use gradient_suite::{run_all, TOL};

#[test]
fn every_op_and_loss_matches_finite_differences() {
    let failures: Vec<String> = run_all()
        .into_iter()
        .filter(|o| !(o.max_rel_err <= TOL))
        .map(|o| format!("{}: {:.3e}", o.name, o.max_rel_err))
        .collect();
    assert!(failures.is_empty(), "gradient mismatches: {failures:?}");
}
