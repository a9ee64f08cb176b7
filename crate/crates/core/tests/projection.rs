mod projection_checks;

use dlda::projection::{select_active, standardize, ProjectionConfig};
use proptest::prelude::*;

#[test]
fn active_set_tracks_poisson_mean_without_threshold_or_cap() {
    let cfg = ProjectionConfig {
        lambda_pois: 20.0,
        delta: None,
        n_max: 200,
    };
    let s = projection_checks::projection_stats(&cfg, 10_000, 5);
    assert!((s.mean_active - 20.0).abs() <= 0.02 * 20.0, "mean active {}", s.mean_active);
    assert_eq!(s.target_rows, s.rows);
    assert!(s.max_row <= cfg.n_max);
}

#[test]
fn capped_rows_keep_targets_and_budget() {
    let cfg = ProjectionConfig {
        lambda_pois: 20.0,
        delta: Some(0.0),
        n_max: 12,
    };
    let s = projection_checks::projection_stats(&cfg, 2_000, 9);
    assert_eq!(s.target_rows, s.rows);
    assert!(s.max_row <= 12, "row of {}", s.max_row);
}

fn argsort(v: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[b].total_cmp(&v[a]).then(a.cmp(&b)));
    idx
}

proptest! {
    #[test]
    fn standardization_preserves_order(s in prop::collection::vec(-100i32..100, 2..40)) {
        let s: Vec<f64> = s.into_iter().map(f64::from).collect();
        let z = standardize(&s);
        prop_assert_eq!(select_active(&s, s.len(), None), select_active(&z, z.len(), None));
        prop_assert_eq!(argsort(&s), select_active(&s, s.len(), None));
    }

    #[test]
    fn threshold_only_removes_items(s in prop::collection::vec(-3.0..3.0f64, 1..40), n in 0usize..40, delta in -2.0..2.0f64) {
        let all = select_active(&s, n, None);
        let kept = select_active(&s, n, Some(delta));
        prop_assert!(kept.len() <= all.len().min(n));
        prop_assert!(kept.iter().all(|i| all.contains(i) && s[*i] >= delta));
    }
}
