//! Measurements of the generator's statistical behaviour. Shared by the
//! core test target and the acceptance target.

use dlda::diffusion::{forward_noise, sample_latent, train_generator, DiffusionConfig, FixedCondition, NoiseSchedule};
use dlda::rng::{normal_vec, rng_from_seed};

/// Trains on a single latent and returns `(mean L2 of 100 samples to it,
/// its norm)`.
pub fn overfit_single_point(seed: u64) -> (f64, f64) {
    let d = 8;
    let mut rng = rng_from_seed(seed);
    let z0: Vec<f64> = normal_vec(&mut rng, d);
    let cond = FixedCondition(normal_vec(&mut rng, d), normal_vec(&mut rng, d));
    let cfg = DiffusionConfig {
        steps: 20,
        hidden: 32,
        lambda_disp: 0.0,
        batch_size: 16,
        // one step per epoch with a single-row pool
        epochs: 2000,
        lr: 0.005,
        ..DiffusionConfig::default()
    };
    let g = train_generator(&cfg, std::slice::from_ref(&z0), &cond, seed).unwrap();
    let dist: f64 = (0..100u64)
        .map(|k| {
            let s = sample_latent(&g.denoiser, &g.schedule, &cond.0, &cond.1, seed ^ (k + 1)).unwrap();
            s.iter().zip(&z0).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt()
        })
        .sum::<f64>()
        / 100.0;
    (dist, z0.iter().map(|v| v * v).sum::<f64>().sqrt())
}

/// Worst relative gap, over dimensions, between the empirical variance of
/// `z_t` and `alpha_bar_t Var(z0) + 1 - alpha_bar_t` over `draws` draws.
pub fn forward_variance_gap(t: usize, draws: usize, seed: u64) -> f64 {
    let sched = NoiseSchedule::linear(1e-4, 0.02, 50).unwrap();
    let scales = [0.5, 1.0, 2.0, 3.0];
    let d = scales.len();
    let mut rng = rng_from_seed(seed);
    let mut z0s = Vec::with_capacity(draws);
    let mut zts = Vec::with_capacity(draws);
    for _ in 0..draws {
        let z0: Vec<f64> = normal_vec(&mut rng, d).iter().zip(scales).map(|(e, s)| 1.0 + s * e).collect();
        let eps = normal_vec(&mut rng, d);
        zts.push(forward_noise(&z0, t, &eps, &sched));
        z0s.push(z0);
    }
    let var = |rows: &[Vec<f64>], j: usize| {
        let n = rows.len() as f64;
        let m = rows.iter().map(|r| r[j]).sum::<f64>() / n;
        rows.iter().map(|r| (r[j] - m).powi(2)).sum::<f64>() / n
    };
    let ab = sched.alpha_bar(t);
    (0..d)
        .map(|j| {
            let expected = ab * var(&z0s, j) + 1.0 - ab;
            (var(&zts, j) - expected).abs() / expected
        })
        .fold(0.0, f64::max)
}

/// Final bottleneck log-det covariance with `lambda_disp` 1 and 0 under the
/// same seed.
pub fn logdet_pair(seed: u64) -> (f64, f64) {
    let d = 8;
    let mut rng = rng_from_seed(seed.wrapping_add(1_000));
    let pool: Vec<Vec<f64>> = (0..64).map(|_| normal_vec(&mut rng, d)).collect();
    let cond = FixedCondition(normal_vec(&mut rng, d), normal_vec(&mut rng, d));
    let run = |lambda_disp: f64| {
        let cfg = DiffusionConfig {
            steps: 20,
            hidden: 16,
            lambda_disp,
            batch_size: 32,
            epochs: 20,
            ..DiffusionConfig::default()
        };
        train_generator(&cfg, &pool, &cond, seed).unwrap().curve.last().unwrap().logdet
    };
    (run(1.0), run(0.0))
}
