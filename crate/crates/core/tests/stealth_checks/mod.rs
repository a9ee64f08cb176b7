//! Planted-structure checks of the stealth metrics. Shared by the core test
//! target and the acceptance target.

use dlda::evaluation::{rvc_entropy, IsolationForest, Mahalanobis};
use dlda::rng::{normal_vec, rng_from_seed};
use nalgebra::{DMatrix, DVector};

fn cloud(n: usize, d: usize, offset: f64, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = rng_from_seed(seed);
    (0..n).map(|_| normal_vec(&mut rng, d).into_iter().map(|v| v + offset).collect()).collect()
}

/// Largest gap between the identity-covariance Mahalanobis distance and
/// the Euclidean distance to the mean.
pub fn identity_mahalanobis_gap(seed: u64) -> f64 {
    let d = 5;
    let mean: Vec<f64> = (0..d).map(|j| j as f64 - 2.0).collect();
    let m = Mahalanobis::from_moments(DVector::from_vec(mean.clone()), DMatrix::identity(d, d)).unwrap();
    cloud(200, d, 0.0, seed)
        .iter()
        .map(|x| {
            let e = x.iter().zip(&mean).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            (m.distance(x) - e).abs()
        })
        .fold(0.0, f64::max)
}

/// `(highest outlier normality score, median inlier score)`.
pub fn isolation_outliers(seed: u64) -> (f64, f64) {
    let d = 4;
    let inliers = cloud(500, d, 0.0, seed);
    let outliers = cloud(10, d, 12.0, seed + 1);
    let reference: Vec<Vec<f64>> = inliers.iter().chain(&outliers).cloned().collect();
    let forest = IsolationForest::fit(&reference, 100, 256, seed + 2);
    let mut inlier_scores: Vec<f64> = inliers.iter().map(|x| forest.score(x)).collect();
    inlier_scores.sort_by(f64::total_cmp);
    let median = inlier_scores[inlier_scores.len() / 2];
    let worst = outliers.iter().map(|x| forest.score(x)).fold(f64::NEG_INFINITY, f64::max);
    (worst, median)
}

/// RVC entropy of fakes from the real distribution, then from a disjoint
/// far cluster.
pub fn rvc_pair(seed: u64) -> (f64, f64) {
    let d = 4;
    let real = cloud(300, d, 0.0, seed);
    let blended = cloud(300, d, 0.0, seed + 1);
    let far = cloud(300, d, 50.0, seed + 2);
    (
        rvc_entropy(&real, &blended, 10).unwrap().value,
        rvc_entropy(&real, &far, 10).unwrap().value,
    )
}
