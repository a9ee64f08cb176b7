use diffcore::{Tape, Var};

use crate::error::{DldaError, Result};
use crate::pairwise::{log_mean_exp_neg, log_mean_exp_neg_pairs, pair_sq_dists};

/// `mean_b ||eps_hat_b - eps_b||^2`: squared error summed over dimensions,
/// averaged over the batch.
pub fn diffusion_term(tape: &mut Tape, eps_hat: Var, eps: Var) -> Result<Var> {
    let diff = tape.sub(eps_hat, eps)?;
    let sq = tape.l2norm_sq(diff)?;
    Ok(tape.mean(sq)?)
}

/// `log mean_{i != j} exp(-||m_i - m_j||^2 / tau)` over the rows of `m`.
pub fn dispersive_term(tape: &mut Tape, m: Var, tau: f64) -> Result<Var> {
    let n = tape.value(m).rows();
    if n < 2 {
        return Err(DldaError::invalid(format!("dispersive loss needs at least 2 rows, got {n}")));
    }
    if !(tau > 0.0) {
        return Err(DldaError::invalid(format!("tau must be positive, got {tau}")));
    }
    let d = pair_sq_dists(tape, m)?;
    log_mean_exp_neg(tape, d, 1.0 / tau)
}

pub fn dispersive_loss(bottlenecks: &[Vec<f64>], tau: f64) -> Result<f64> {
    if bottlenecks.len() < 2 {
        return Err(DldaError::invalid(format!(
            "dispersive loss needs at least 2 rows, got {}",
            bottlenecks.len()
        )));
    }
    if !(tau > 0.0) {
        return Err(DldaError::invalid(format!("tau must be positive, got {tau}")));
    }
    Ok(log_mean_exp_neg_pairs(bottlenecks, 1.0 / tau))
}
