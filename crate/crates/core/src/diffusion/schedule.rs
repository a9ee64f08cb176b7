use serde::{Deserialize, Serialize};

use crate::error::{DldaError, Result};

/// `beta_t` for `t = 1..=T` with the derived `alpha_t` and `alpha_bar_t`.
/// Vectors are stored 0-based: index `t - 1` holds step `t`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseSchedule {
    pub beta: Vec<f64>,
    pub alpha: Vec<f64>,
    pub alpha_bar: Vec<f64>,
}

impl NoiseSchedule {
    /// Linear betas from `start` to `end` over `steps` steps.
    pub fn linear(start: f64, end: f64, steps: usize) -> Result<Self> {
        if !(start > 0.0 && start <= end && end < 1.0) {
            return Err(DldaError::invalid(format!(
                "linear schedule needs 0 < start <= end < 1, got start={start} end={end}"
            )));
        }
        let beta: Vec<f64> = (0..steps)
            .map(|k| {
                if steps == 1 {
                    start
                } else {
                    start + (end - start) * k as f64 / (steps - 1) as f64
                }
            })
            .collect();
        Ok(Self::from_betas(beta))
    }

    pub fn from_betas(beta: Vec<f64>) -> Self {
        let alpha: Vec<f64> = beta.iter().map(|b| 1.0 - b).collect();
        let mut alpha_bar = Vec::with_capacity(alpha.len());
        let mut acc = 1.0;
        for a in &alpha {
            acc *= a;
            alpha_bar.push(acc);
        }
        Self { beta, alpha, alpha_bar }
    }

    pub fn steps(&self) -> usize {
        self.beta.len()
    }

    pub fn beta(&self, t: usize) -> f64 {
        self.beta[t - 1]
    }

    pub fn alpha(&self, t: usize) -> f64 {
        self.alpha[t - 1]
    }

    /// `alpha_bar_t`, with `alpha_bar_0 = 1`.
    pub fn alpha_bar(&self, t: usize) -> f64 {
        if t == 0 {
            1.0
        } else {
            self.alpha_bar[t - 1]
        }
    }
}

/// `z_t = sqrt(abar) z0 + sqrt(1 - abar) eps`.
pub fn noise_with(z0: &[f64], alpha_bar: f64, eps: &[f64]) -> Vec<f64> {
    let (a, b) = (alpha_bar.sqrt(), (1.0 - alpha_bar).sqrt());
    z0.iter().zip(eps).map(|(z, e)| a * z + b * e).collect()
}

pub fn forward_noise(z0: &[f64], t: usize, eps: &[f64], sched: &NoiseSchedule) -> Vec<f64> {
    noise_with(z0, sched.alpha_bar(t), eps)
}

/// One ancestral step `z_t -> z_{t-1}`. The step that produces `z_0`
/// (`t = 1`) adds no noise.
pub fn reverse_step(z_t: &[f64], t: usize, eps_hat: &[f64], sched: &NoiseSchedule, eta: &[f64]) -> Vec<f64> {
    let beta = sched.beta(t);
    let inv_sqrt_alpha = 1.0 / sched.alpha(t).sqrt();
    let coef = beta / (1.0 - sched.alpha_bar(t)).sqrt();
    let sigma = if t > 1 { beta.sqrt() } else { 0.0 };
    z_t.iter()
        .zip(eps_hat)
        .zip(eta)
        .map(|((z, e), n)| inv_sqrt_alpha * (z - coef * e) + sigma * n)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_step_schedule() {
        let s = NoiseSchedule::linear(0.1, 0.2, 1).unwrap();
        assert_eq!(s.alpha_bar(1), 0.9);
        assert_eq!(s.alpha_bar(0), 1.0);
    }

    #[test]
    fn cumulative_product() {
        let s = NoiseSchedule::linear(0.5, 0.5, 2).unwrap();
        assert_eq!(s.alpha_bar, vec![0.5, 0.25]);
    }

    #[test]
    fn linear_endpoints_and_monotone() {
        let s = NoiseSchedule::linear(1e-4, 0.02, 50).unwrap();
        assert_eq!(s.beta(1), 1e-4);
        assert!((s.beta(50) - 0.02).abs() < 1e-15);
        assert!(s.alpha_bar.windows(2).all(|w| w[1] < w[0]));
    }

    #[test]
    fn bounds_rejected() {
        assert!(NoiseSchedule::linear(0.0, 0.1, 3).is_err());
        assert!(NoiseSchedule::linear(0.2, 0.1, 3).is_err());
        assert!(NoiseSchedule::linear(0.1, 1.0, 3).is_err());
        assert_eq!(NoiseSchedule::linear(0.1, 0.2, 0).unwrap().steps(), 0);
    }

    #[test]
    fn forward_examples() {
        assert_eq!(noise_with(&[1.0, 2.0], 1.0, &[5.0, 5.0]), vec![1.0, 2.0]);
        assert_eq!(noise_with(&[1.0, 2.0], 0.0, &[5.0, 6.0]), vec![5.0, 6.0]);
        let z = noise_with(&[2.0, 0.0], 0.25, &[0.0, 2.0]);
        assert!((z[0] - 1.0).abs() < 1e-15);
        assert!((z[1] - 3f64.sqrt()).abs() < 1e-7);
        assert!((z[1] - 1.7320508).abs() < 1e-7);
    }

    #[test]
    fn final_step_is_noiseless() {
        let s = NoiseSchedule::linear(0.1, 0.2, 3).unwrap();
        let a = reverse_step(&[1.0], 1, &[0.3], &s, &[0.0]);
        let b = reverse_step(&[1.0], 1, &[0.3], &s, &[100.0]);
        assert_eq!(a, b);
        let c = reverse_step(&[1.0], 2, &[0.3], &s, &[100.0]);
        assert_ne!(a, c);
    }

    #[test]
    fn tiny_beta_is_near_identity() {
        let s = NoiseSchedule::from_betas(vec![1e-14, 1e-14]);
        let z = reverse_step(&[0.7, -1.2], 2, &[0.5, 0.5], &s, &[1.0, 1.0]);
        assert!((z[0] - 0.7).abs() < 1e-6 && (z[1] + 1.2).abs() < 1e-6);
    }

    #[test]
    fn oracle_noise_recovers_posterior_mean() {
        // with the true eps, the reverse mean equals the closed form
        // (z_t - beta/sqrt(1-abar) eps)/sqrt(alpha) obtained by substituting
        // the forward expression for z_t
        let s = NoiseSchedule::linear(0.05, 0.3, 4).unwrap();
        let (z0, eps) = ([0.4, -1.0, 2.0], [1.1, 0.2, -0.7]);
        for t in 2..=4 {
            let zt = forward_noise(&z0, t, &eps, &s);
            let got = reverse_step(&zt, t, &eps, &s, &[0.0; 3]);
            let (ab, a, b) = (s.alpha_bar(t), s.alpha(t), s.beta(t));
            for k in 0..3 {
                let expect = (ab.sqrt() * z0[k] + ((1.0 - ab).sqrt() - b / (1.0 - ab).sqrt()) * eps[k]) / a.sqrt();
                assert!((got[k] - expect).abs() < 1e-12);
            }
        }
    }
}
