//! Pairwise-distance building blocks shared by the uniformity and
//! dispersive losses.

use std::sync::Arc;

use diffcore::{Tape, Tensor, Var};

use crate::error::Result;

/// Row indices `(i, j)` of every ordered pair `i != j` among `n` rows.
pub fn ordered_pairs(n: usize) -> (Vec<usize>, Vec<usize>) {
    let mut is = Vec::with_capacity(n * n.saturating_sub(1));
    let mut js = Vec::with_capacity(n * n.saturating_sub(1));
    for i in 0..n {
        for j in 0..n {
            if i != j {
                is.push(i);
                js.push(j);
            }
        }
    }
    (is, js)
}

/// Squared distances `||x_i - x_j||^2` over all ordered pairs of rows of a
/// `[n, d]` variable, as an `[n(n-1)]` vector.
pub fn pair_sq_dists(tape: &mut Tape, x: Var) -> Result<Var> {
    let n = tape.value(x).rows();
    let (is, js) = ordered_pairs(n);
    let a = tape.gather_rows(x, Arc::new(is))?;
    let b = tape.gather_rows(x, Arc::new(js))?;
    let diff = tape.sub(a, b)?;
    Ok(tape.l2norm_sq(diff)?)
}

/// `log(mean(exp(-scale * d)))` over a vector of distances, shifted by the
/// smallest distance so the exponentials cannot all underflow.
pub fn log_mean_exp_neg(tape: &mut Tape, dists: Var, scale: f64) -> Result<Var> {
    let s = tape.scale(dists, -scale)?;
    let shift = tape.value(s).data().iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let c = tape.leaf(Tensor::scalar(shift))?;
    let centered = tape.sub(s, c)?;
    let e = tape.exp(centered)?;
    let m = tape.mean(e)?;
    let l = tape.log(m)?;
    Ok(tape.add(l, c)?)
}

/// Plain-value version of [`log_mean_exp_neg`] over all ordered pairs of
/// `rows`.
pub fn log_mean_exp_neg_pairs(rows: &[Vec<f64>], scale: f64) -> f64 {
    let n = rows.len();
    let mut s = Vec::with_capacity(n * n.saturating_sub(1));
    for i in 0..n {
        for j in 0..n {
            if i != j {
                let d: f64 = rows[i].iter().zip(&rows[j]).map(|(a, b)| (a - b) * (a - b)).sum();
                s.push(-scale * d);
            }
        }
    }
    let shift = s.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mean = s.iter().map(|v| (v - shift).exp()).sum::<f64>() / s.len() as f64;
    mean.ln() + shift
}
