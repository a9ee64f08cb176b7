use rand::seq::index::sample;
use rand::Rng;

use crate::rng::{rng_from_seed, StageRng};

/// Average unsuccessful-search path length in a binary search tree of `n`
/// points, the usual isolation-forest normalizer.
pub fn average_path_length(n: usize) -> f64 {
    match n {
        0 | 1 => 0.0,
        2 => 1.0,
        _ => {
            let n = n as f64;
            2.0 * ((n - 1.0).ln() + 0.577_215_664_901_532_9) - 2.0 * (n - 1.0) / n
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
enum Node {
    Leaf { size: usize },
    Split { feature: usize, threshold: f64, left: Box<Node>, right: Box<Node> },
}

fn grow(points: &[&[f64]], depth: usize, max_depth: usize, rng: &mut StageRng) -> Node {
    if points.len() <= 1 || depth >= max_depth {
        return Node::Leaf { size: points.len() };
    }
    let d = points[0].len();
    // features with spread; a node whose points coincide is a leaf
    let spread: Vec<(usize, f64, f64)> = (0..d)
        .filter_map(|f| {
            let (lo, hi) = points
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| (lo.min(p[f]), hi.max(p[f])));
            (hi > lo).then_some((f, lo, hi))
        })
        .collect();
    if spread.is_empty() {
        return Node::Leaf { size: points.len() };
    }
    let (feature, lo, hi) = spread[rng.random_range(0..spread.len())];
    let threshold = rng.random_range(lo..hi);
    let (l, r): (Vec<&[f64]>, Vec<&[f64]>) = points.iter().partition(|p| p[feature] < threshold);
    Node::Split {
        feature,
        threshold,
        left: Box::new(grow(&l, depth + 1, max_depth, rng)),
        right: Box::new(grow(&r, depth + 1, max_depth, rng)),
    }
}

fn path_length(node: &Node, x: &[f64], depth: usize) -> f64 {
    match node {
        Node::Leaf { size } => depth as f64 + average_path_length(*size),
        Node::Split { feature, threshold, left, right } => {
            if x[*feature] < *threshold {
                path_length(left, x, depth + 1)
            } else {
                path_length(right, x, depth + 1)
            }
        }
    }
}

/// Isolation forest fitted on reference points.
#[derive(Clone, Debug, PartialEq)]
pub struct IsolationForest {
    trees: Vec<Node>,
    subsample: usize,
}

impl IsolationForest {
    /// `trees` random trees, each grown on `subsample` reference points
    /// drawn without replacement, depth-limited to `ceil(log2 subsample)`.
    pub fn fit(reference: &[Vec<f64>], trees: usize, subsample: usize, seed: u64) -> Self {
        let psi = subsample.min(reference.len()).max(1);
        let max_depth = (psi as f64).log2().ceil() as usize;
        let mut rng = rng_from_seed(seed);
        let trees = (0..trees)
            .map(|_| {
                let idx = sample(&mut rng, reference.len(), psi.min(reference.len()));
                let pts: Vec<&[f64]> = idx.iter().map(|i| reference[i].as_slice()).collect();
                grow(&pts, 0, max_depth, &mut rng)
            })
            .collect();
        Self { trees, subsample: psi }
    }

    /// Anomaly score `s = 2^(-E[h(x)] / c(psi))` in (0, 1].
    pub fn anomaly_score(&self, x: &[f64]) -> f64 {
        let mean = self.trees.iter().map(|t| path_length(t, x, 0)).sum::<f64>() / self.trees.len() as f64;
        let c = average_path_length(self.subsample);
        if c == 0.0 {
            return 0.5;
        }
        2f64.powf(-mean / c)
    }

    /// Normality `0.5 - s`: higher is more normal.
    pub fn score(&self, x: &[f64]) -> f64 {
        0.5 - self.anomaly_score(x)
    }
}

/// Fits on `reference` and scores every point.
pub fn isolation_forest_score(
    points: &[Vec<f64>],
    reference: &[Vec<f64>],
    trees: usize,
    subsample: usize,
    seed: u64,
) -> Vec<f64> {
    let f = IsolationForest::fit(reference, trees, subsample, seed);
    points.iter().map(|p| f.score(p)).collect()
}
