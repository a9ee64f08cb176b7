use std::cmp::Ordering;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use super::iforest::IsolationForest;
use crate::error::{DldaError, Result};

/// Relative covariance regularization: `eps = REG_REL * trace / d`.
pub const REG_REL: f64 = 1e-6;
/// Lower bound on `eps` so fully degenerate sets stay finite.
pub const REG_FLOOR: f64 = 1e-12;

fn check_points(points: &[Vec<f64>], what: &str) -> Result<usize> {
    let d = points.first().map(Vec::len).ok_or_else(|| DldaError::invalid(format!("{what}: no points")))?;
    if d == 0 || points.iter().any(|p| p.len() != d) {
        return Err(DldaError::invalid(format!("{what}: points must share a nonzero width")));
    }
    Ok(d)
}

/// Mean and population covariance.
pub fn moments(points: &[Vec<f64>]) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let d = check_points(points, "moments")?;
    let n = points.len() as f64;
    let mut mean = DVector::zeros(d);
    for p in points {
        mean += DVector::from_column_slice(p);
    }
    mean /= n;
    let mut cov = DMatrix::zeros(d, d);
    for p in points {
        let c = DVector::from_column_slice(p) - &mean;
        cov.ger(1.0, &c, &c, 1.0);
    }
    cov /= n;
    Ok((mean, cov))
}

pub fn default_epsilon(cov: &DMatrix<f64>) -> f64 {
    (REG_REL * cov.trace() / cov.nrows() as f64).max(REG_FLOOR)
}

#[derive(Clone, Debug)]
pub struct Mahalanobis {
    mean: DVector<f64>,
    precision: DMatrix<f64>,
}

impl Mahalanobis {
    pub fn from_moments(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        let precision = cov
            .cholesky()
            .ok_or_else(|| DldaError::invalid("covariance is singular after regularization"))?
            .inverse();
        Ok(Self { mean, precision })
    }

    /// Fits on `real` with `cov + eps I`. Requires more points than
    /// dimensions.
    pub fn fit_with(real: &[Vec<f64>], eps: f64) -> Result<Self> {
        let d = check_points(real, "mahalanobis")?;
        if real.len() < d + 1 {
            return Err(DldaError::invalid(format!(
                "mahalanobis needs at least {} reference points, got {}",
                d + 1,
                real.len()
            )));
        }
        let (mean, mut cov) = moments(real)?;
        for k in 0..d {
            cov[(k, k)] += eps;
        }
        Self::from_moments(mean, cov)
    }

    /// Fits with the default regularization.
    pub fn fit(real: &[Vec<f64>]) -> Result<Self> {
        let (_, cov) = moments(real)?;
        Self::fit_with(real, default_epsilon(&cov))
    }

    pub fn distance(&self, x: &[f64]) -> f64 {
        let c = DVector::from_column_slice(x) - &self.mean;
        (c.dot(&(&self.precision * &c))).max(0.0).sqrt()
    }
}

pub fn mahalanobis(point: &[f64], real: &[Vec<f64>]) -> Result<f64> {
    Ok(Mahalanobis::fit(real)?.distance(point))
}

/// Isotropic Gaussian KDE scored relative to the densest reference point.
#[derive(Clone, Debug)]
pub struct Kde {
    points: Vec<Vec<f64>>,
    bandwidth: f64,
    max_log_density: f64,
}

/// Scott's rule `sigma * n^(-1/(d+4))`, sigma the mean per-dimension sample
/// standard deviation.
pub fn scott_bandwidth(points: &[Vec<f64>]) -> f64 {
    let n = points.len();
    let d = points.first().map_or(1, Vec::len);
    if n < 2 {
        return 1.0;
    }
    let mut sd_sum = 0.0;
    for k in 0..d {
        let mean = points.iter().map(|p| p[k]).sum::<f64>() / n as f64;
        let var = points.iter().map(|p| (p[k] - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        sd_sum += var.sqrt();
    }
    let sigma = sd_sum / d as f64;
    let h = sigma * (n as f64).powf(-1.0 / (d as f64 + 4.0));
    if h > 0.0 {
        h
    } else {
        1.0
    }
}

impl Kde {
    pub fn fit(real: &[Vec<f64>], bandwidth: Option<f64>) -> Result<Self> {
        check_points(real, "kde")?;
        let bandwidth = bandwidth.unwrap_or_else(|| scott_bandwidth(real));
        if !(bandwidth > 0.0) {
            return Err(DldaError::invalid(format!("bandwidth must be positive, got {bandwidth}")));
        }
        let mut kde = Self {
            points: real.to_vec(),
            bandwidth,
            max_log_density: 0.0,
        };
        kde.max_log_density = real
            .iter()
            .map(|p| kde.log_density(p))
            .fold(f64::NEG_INFINITY, f64::max);
        Ok(kde)
    }

    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    /// Log of `mean_i exp(-||x - x_i||^2 / (2 h^2))`, without the Gaussian
    /// normalizing constant (it cancels in [`Kde::score`]).
    pub fn log_density(&self, x: &[f64]) -> f64 {
        let inv = 1.0 / (2.0 * self.bandwidth * self.bandwidth);
        let logs: Vec<f64> = self
            .points
            .iter()
            .map(|p| -inv * p.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum::<f64>())
            .collect();
        let top = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = logs.iter().map(|l| (l - top).exp()).sum();
        top + (sum / self.points.len() as f64).ln()
    }

    /// Density at `x` divided by the largest density over the reference
    /// points.
    pub fn score(&self, x: &[f64]) -> f64 {
        (self.log_density(x) - self.max_log_density).exp()
    }
}

pub fn kde_likelihood(point: &[f64], real: &[Vec<f64>], bandwidth: f64) -> Result<f64> {
    Ok(Kde::fit(real, Some(bandwidth))?.score(point))
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Indices of the `k` nearest points to `points[q]`, excluding `q`; ties go
/// to the lower index.
fn knn(points: &[&[f64]], q: usize, k: usize) -> Vec<usize> {
    let mut d: Vec<(f64, usize)> = (0..points.len())
        .filter(|&j| j != q)
        .map(|j| (sq_dist(points[q], points[j]), j))
        .collect();
    let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
    let k = k.min(d.len());
    if k == 0 {
        return Vec::new();
    }
    if k < d.len() {
        d.select_nth_unstable_by(k - 1, cmp);
        d.truncate(k);
    }
    d.sort_unstable_by(cmp);
    d.into_iter().map(|(_, j)| j).collect()
}

fn binary_entropy(p: f64) -> f64 {
    let h = |x: f64| if x > 0.0 { -x * x.log2() } else { 0.0 };
    h(p) + h(1.0 - p)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RvcEntropy {
    pub value: f64,
    /// Neighbours actually used: `min(k, |real|, |fake|)`.
    pub k: usize,
}

/// Mean binary entropy of the real-label fraction among each fake point's
/// nearest labelled neighbours (itself excluded).
pub fn rvc_entropy(real: &[Vec<f64>], fake: &[Vec<f64>], k: usize) -> Result<RvcEntropy> {
    if real.is_empty() || fake.is_empty() || k == 0 {
        return Err(DldaError::invalid("rvc entropy needs real and fake points and k > 0"));
    }
    let k = k.min(real.len()).min(fake.len());
    let all: Vec<&[f64]> = real.iter().chain(fake).map(Vec::as_slice).collect();
    let r = real.len();
    let total: f64 = (0..fake.len())
        .map(|f| {
            let nb = knn(&all, r + f, k);
            let p = nb.iter().filter(|&&j| j < r).count() as f64 / k as f64;
            binary_entropy(p)
        })
        .sum();
    Ok(RvcEntropy {
        value: total / fake.len() as f64,
        k,
    })
}

/// Degrees in the undirected graph joining each point to its `k` nearest
/// neighbours.
pub fn knn_graph_degrees(points: &[Vec<f64>], k: usize) -> Result<Vec<usize>> {
    if k == 0 || k >= points.len() {
        return Err(DldaError::invalid(format!(
            "knn graph needs 0 < k < {} points, got k={k}",
            points.len()
        )));
    }
    let refs: Vec<&[f64]> = points.iter().map(Vec::as_slice).collect();
    let n = points.len();
    let mut adj = vec![vec![false; n]; n];
    for a in 0..n {
        for b in knn(&refs, a, k) {
            adj[a][b] = true;
            adj[b][a] = true;
        }
    }
    Ok(adj.iter().map(|row| row.iter().filter(|&&x| x).count()).collect())
}

/// Mean degree of the nodes flagged in `fake` (same length as `points`).
pub fn knn_graph_degree(points: &[Vec<f64>], fake: &[bool], k: usize) -> Result<f64> {
    let deg = knn_graph_degrees(points, k)?;
    let sel: Vec<usize> = deg.iter().zip(fake).filter(|(_, &f)| f).map(|(d, _)| *d).collect();
    if sel.is_empty() {
        return Err(DldaError::invalid("no fake nodes flagged"));
    }
    Ok(sel.iter().sum::<usize>() as f64 / sel.len() as f64)
}

/// `log det(cov + eps I)` with the population covariance.
pub fn logdet_covariance(points: &[Vec<f64>], eps: f64) -> Result<f64> {
    if points.len() < 2 {
        return Err(DldaError::invalid("log-det covariance needs at least 2 points"));
    }
    let (_, mut cov) = moments(points)?;
    for k in 0..cov.nrows() {
        cov[(k, k)] += eps;
    }
    let chol = cov
        .cholesky()
        .ok_or_else(|| DldaError::invalid("covariance is not positive definite"))?;
    Ok(2.0 * chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>())
}

/// [`logdet_covariance`] with `eps = max(1e-6 trace / d, 1e-12)`.
pub fn logdet_covariance_regularized(points: &[Vec<f64>]) -> Result<f64> {
    if points.len() < 2 {
        return Err(DldaError::invalid("log-det covariance needs at least 2 points"));
    }
    let (_, cov) = moments(points)?;
    logdet_covariance(points, default_epsilon(&cov))
}

pub fn centroid(points: &[Vec<f64>]) -> Vec<f64> {
    let d = points[0].len();
    let mut c = vec![0.0; d];
    for p in points {
        for (a, v) in c.iter_mut().zip(p) {
            *a += v;
        }
    }
    c.iter_mut().for_each(|v| *v /= points.len() as f64);
    c
}

/// Pairwise L2 distances between group means.
pub fn centroid_distances(groups: &[&[Vec<f64>]]) -> Result<Vec<Vec<f64>>> {
    if groups.iter().any(|g| g.is_empty()) {
        return Err(DldaError::invalid("every group needs at least one point"));
    }
    let cs: Vec<Vec<f64>> = groups.iter().map(|g| centroid(g)).collect();
    Ok(cs.iter().map(|a| cs.iter().map(|b| sq_dist(a, b).sqrt()).collect()).collect())
}

/// Principal axes of a point set, strongest first.
#[derive(Clone, Debug, PartialEq)]
pub struct Pca {
    pub mean: Vec<f64>,
    /// Unit-norm, mutually orthogonal rows.
    pub components: Vec<Vec<f64>>,
    pub variances: Vec<f64>,
}

impl Pca {
    /// Up to `k` components. Each component's sign is fixed so that its
    /// largest-magnitude entry is positive.
    pub fn fit(points: &[Vec<f64>], k: usize) -> Result<Self> {
        let (mean, cov) = moments(points)?;
        let eig = SymmetricEigen::new(cov);
        let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
        order.sort_by(|&a, &b| {
            eig.eigenvalues[b]
                .partial_cmp(&eig.eigenvalues[a])
                .unwrap_or(Ordering::Equal)
                .then(a.cmp(&b))
        });
        order.truncate(k);
        let mut components = Vec::with_capacity(order.len());
        let mut variances = Vec::with_capacity(order.len());
        for &c in &order {
            let mut v: Vec<f64> = eig.eigenvectors.column(c).iter().copied().collect();
            let lead = v.iter().copied().fold(0.0f64, |m, x| if x.abs() > m.abs() { x } else { m });
            if lead < 0.0 {
                v.iter_mut().for_each(|x| *x = -*x);
            }
            components.push(v);
            variances.push(eig.eigenvalues[c].max(0.0));
        }
        Ok(Self {
            mean: mean.iter().copied().collect(),
            components,
            variances,
        })
    }

    pub fn project(&self, x: &[f64]) -> Vec<f64> {
        self.components
            .iter()
            .map(|c| c.iter().zip(x).zip(&self.mean).map(|((w, v), m)| w * (v - m)).sum())
            .collect()
    }
}

/// Three-component PCA fitted on the pooled groups, as `x,y,z,group` CSV.
pub fn pca_export_csv(groups: &[(&str, &[Vec<f64>])]) -> Result<String> {
    let pooled: Vec<Vec<f64>> = groups.iter().flat_map(|(_, g)| g.iter().cloned()).collect();
    let pca = Pca::fit(&pooled, 3)?;
    let mut out = String::from("x,y,z,group\n");
    for (name, g) in groups {
        for p in g.iter() {
            let mut c = pca.project(p);
            c.resize(3, 0.0);
            out.push_str(&format!("{:.16e},{:.16e},{:.16e},{name}\n", c[0], c[1], c[2]));
        }
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MeanVar {
    pub mean: f64,
    pub var: f64,
}

impl MeanVar {
    /// Population mean and variance; empty input gives zeros.
    pub fn of(values: &[f64]) -> Self {
        if values.is_empty() {
            return Self::default();
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        Self { mean, var }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StealthConfig {
    pub knn_k: usize,
    pub rvc_k: usize,
    pub if_trees: usize,
    pub if_subsample: usize,
}

impl Default for StealthConfig {
    fn default() -> Self {
        Self {
            knn_k: 10,
            rvc_k: 10,
            if_trees: 100,
            if_subsample: 256,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupStealth {
    pub count: usize,
    pub mahalanobis: MeanVar,
    pub kde_score: MeanVar,
    pub iforest_score: MeanVar,
    pub knn_degree: MeanVar,
    pub logdet_covariance: Option<f64>,
}

/// Stealth battery for one victim: real users versus fake users.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StealthMetrics {
    pub real: GroupStealth,
    pub fake: Option<GroupStealth>,
    pub rvc_entropy: Option<RvcEntropy>,
    /// Rows and columns follow `groups`.
    pub groups: Vec<String>,
    pub centroid_distance: Vec<Vec<f64>>,
}

pub fn stealth_metrics(real: &[Vec<f64>], fake: &[Vec<f64>], cfg: &StealthConfig, seed: u64) -> Result<StealthMetrics> {
    let maha = Mahalanobis::fit(real)?;
    let kde = Kde::fit(real, None)?;
    let forest = IsolationForest::fit(real, cfg.if_trees, cfg.if_subsample, seed);
    let mut pooled: Vec<Vec<f64>> = real.to_vec();
    pooled.extend(fake.iter().cloned());
    let degrees = knn_graph_degrees(&pooled, cfg.knn_k.min(pooled.len() - 1))?;
    let deg_f: Vec<f64> = degrees.iter().map(|&d| d as f64).collect();

    let group = |pts: &[Vec<f64>], deg: &[f64]| -> Result<GroupStealth> {
        let m: Vec<f64> = pts.iter().map(|p| maha.distance(p)).collect();
        let k: Vec<f64> = pts.iter().map(|p| kde.score(p)).collect();
        let f: Vec<f64> = pts.iter().map(|p| forest.score(p)).collect();
        Ok(GroupStealth {
            count: pts.len(),
            mahalanobis: MeanVar::of(&m),
            kde_score: MeanVar::of(&k),
            iforest_score: MeanVar::of(&f),
            knn_degree: MeanVar::of(deg),
            logdet_covariance: if pts.len() >= 2 {
                Some(logdet_covariance_regularized(pts)?)
            } else {
                None
            },
        })
    };
    let real_g = group(real, &deg_f[..real.len()])?;
    if fake.is_empty() {
        return Ok(StealthMetrics {
            real: real_g,
            fake: None,
            rvc_entropy: None,
            groups: vec!["real".into()],
            centroid_distance: vec![vec![0.0]],
        });
    }
    let fake_g = group(fake, &deg_f[real.len()..])?;
    Ok(StealthMetrics {
        real: real_g,
        fake: Some(fake_g),
        rvc_entropy: Some(rvc_entropy(real, fake, cfg.rvc_k)?),
        groups: vec!["real".into(), "fake".into()],
        centroid_distance: centroid_distances(&[real, fake])?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_dimensional_mahalanobis() {
        let real = vec![vec![0.0], vec![2.0]];
        let m = Mahalanobis::fit_with(&real, 0.0).unwrap();
        assert!((m.distance(&[3.0]) - 2.0).abs() < 1e-12);
        assert_eq!(m.distance(&[1.0]), 0.0);
    }

    #[test]
    fn identity_covariance_is_euclidean() {
        let m = Mahalanobis::from_moments(DVector::from_vec(vec![1.0, -1.0]), DMatrix::identity(2, 2)).unwrap();
        assert!((m.distance(&[4.0, 3.0]) - 5.0).abs() < 1e-12);
    }

    #[test]
    fn too_few_reference_points() {
        assert!(Mahalanobis::fit(&[vec![0.0, 1.0], vec![1.0, 0.0]]).is_err());
    }

    #[test]
    fn kde_two_point_closed_form() {
        let real = vec![vec![0.0], vec![2.0]];
        let kde = Kde::fit(&real, Some(1.0)).unwrap();
        let mid = (-0.5f64).exp();
        let at_real = (1.0 + (-2.0f64).exp()) / 2.0;
        assert!((kde.score(&[1.0]) - mid / at_real).abs() < 1e-12);
        assert!((kde.score(&[0.0]) - 1.0).abs() < 1e-12);
        assert!(kde.score(&[1e3]) < 1e-300);
    }

    #[test]
    fn equidistant_points_form_complete_graph() {
        // regular tetrahedron
        let pts = vec![
            vec![1.0, 1.0, 1.0],
            vec![1.0, -1.0, -1.0],
            vec![-1.0, 1.0, -1.0],
            vec![-1.0, -1.0, 1.0],
        ];
        assert_eq!(knn_graph_degrees(&pts, 3).unwrap(), vec![3; 4]);
        assert_eq!(knn_graph_degree(&pts, &[false, false, true, true], 3).unwrap(), 3.0);
    }

    #[test]
    fn entropy_bounds() {
        assert_eq!(binary_entropy(0.5), 1.0);
        assert_eq!(binary_entropy(0.0), 0.0);
        let real: Vec<Vec<f64>> = (0..20).map(|i| vec![i as f64, 0.0]).collect();
        let far: Vec<Vec<f64>> = (0..20).map(|i| vec![i as f64, 1e6]).collect();
        assert_eq!(rvc_entropy(&real, &far, 5).unwrap().value, 0.0);
    }

    #[test]
    fn interleaved_grid_entropy() {
        // reals on even grid points, fakes on odd: every fake's two nearest
        // neighbours are the reals beside it except at the right edge
        let real: Vec<Vec<f64>> = (0..10).map(|i| vec![(2 * i) as f64]).collect();
        let fake: Vec<Vec<f64>> = (0..10).map(|i| vec![(2 * i + 1) as f64]).collect();
        let r = rvc_entropy(&real, &fake, 2).unwrap();
        // fakes 0..8 see reals at distance 1 on both sides (p = 1); the
        // last fake at 19 has real 18 at distance 1 and fake 17 at distance 2
        let expect = binary_entropy(0.5) / 10.0;
        assert!((r.value - expect).abs() < 1e-12);
    }

    #[test]
    fn logdet_examples() {
        let pts = vec![vec![1.0, 0.0], vec![-1.0, 0.0], vec![0.0, 1.0], vec![0.0, -1.0]];
        // covariance is I/2 in 2-D
        let base = logdet_covariance(&pts, 0.0).unwrap();
        assert!((base - 2.0 * 0.5f64.ln()).abs() < 1e-12);
        let scaled: Vec<Vec<f64>> = pts.iter().map(|p| p.iter().map(|v| v * 3.0).collect()).collect();
        let shifted = logdet_covariance(&scaled, 0.0).unwrap();
        assert!((shifted - base - 4.0 * 3f64.ln()).abs() < 1e-12);
        let same = vec![vec![2.0, 2.0, 2.0]; 5];
        assert!((logdet_covariance(&same, 1e-3).unwrap() - 3.0 * 1e-3f64.ln()).abs() < 1e-9);
    }

    #[test]
    fn pca_components_orthonormal() {
        let pts: Vec<Vec<f64>> = (0..40)
            .map(|i| {
                let t = i as f64 * 0.37;
                vec![t.sin() * 3.0, t.cos(), (2.0 * t).sin() * 0.5, t * 0.1]
            })
            .collect();
        let pca = Pca::fit(&pts, 3).unwrap();
        for a in 0..3 {
            for b in 0..3 {
                let dot: f64 = pca.components[a].iter().zip(&pca.components[b]).map(|(x, y)| x * y).sum();
                let expect = if a == b { 1.0 } else { 0.0 };
                assert!((dot - expect).abs() < 1e-9);
            }
        }
        assert!(pca.variances.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn identical_groups_have_zero_centroid_distance() {
        let g = vec![vec![1.0, 2.0], vec![3.0, 4.0]];
        let m = centroid_distances(&[&g, &g]).unwrap();
        assert_eq!(m, vec![vec![0.0, 0.0], vec![0.0, 0.0]]);
    }
}
