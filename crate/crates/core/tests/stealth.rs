mod stealth_checks;

use dlda::evaluation::{centroid_distances, mahalanobis, Mahalanobis};
use proptest::prelude::*;

#[test]
fn identity_covariance_gives_euclidean_distance() {
    assert!(stealth_checks::identity_mahalanobis_gap(1) <= 1e-9);
}

#[test]
fn planted_outliers_score_below_inlier_median() {
    let (worst, median) = stealth_checks::isolation_outliers(4);
    assert!(worst < median, "outlier {worst} vs median {median}");
}

#[test]
fn rvc_entropy_separates_blended_from_disjoint_fakes() {
    let (blended, far) = stealth_checks::rvc_pair(2);
    assert!(blended >= 0.8, "blended {blended}");
    assert!(far <= 0.05, "far {far}");
}

#[test]
fn centroid_matrix_has_zero_diagonal() {
    let a = vec![vec![0.0, 1.0], vec![2.0, 3.0]];
    let b = vec![vec![5.0, 5.0]];
    let m = centroid_distances(&[&a, &b]).unwrap();
    assert_eq!(m[0][0], 0.0);
    assert_eq!(m[1][1], 0.0);
    assert_eq!(m[0][1], m[1][0]);
}

fn cloud() -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(prop::collection::vec(-3.0..3.0f64, 2), 8..20)
}

proptest! {
    #[test]
    fn mahalanobis_is_affine_invariant(
        pts in cloud(),
        q in prop::collection::vec(-3.0..3.0f64, 2),
        a in prop::array::uniform4(-2.0..2.0f64),
        b in prop::collection::vec(-5.0..5.0f64, 2),
    ) {
        let det = a[0] * a[3] - a[1] * a[2];
        prop_assume!(det.abs() > 0.2);
        // the regularizer scales with the covariance trace, so compare the
        // exact-moment form
        let map = |x: &[f64]| vec![a[0] * x[0] + a[1] * x[1] + b[0], a[2] * x[0] + a[3] * x[1] + b[1]];
        let moved: Vec<Vec<f64>> = pts.iter().map(|p| map(p)).collect();
        let before = Mahalanobis::fit_with(&pts, 0.0);
        let after = Mahalanobis::fit_with(&moved, 0.0);
        prop_assume!(before.is_ok() && after.is_ok());
        let d0 = before.unwrap().distance(&q);
        let d1 = after.unwrap().distance(&map(&q));
        prop_assert!((d0 - d1).abs() <= 1e-6 * d0.max(1.0), "{} vs {}", d0, d1);
    }

    #[test]
    fn distance_is_non_negative(pts in cloud(), q in prop::collection::vec(-3.0..3.0f64, 2)) {
        if let Ok(d) = mahalanobis(&q, &pts) {
            prop_assert!(d >= 0.0);
        }
    }
}
