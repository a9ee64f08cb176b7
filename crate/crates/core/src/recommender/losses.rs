//! Recommendation losses, built on a [`Tape`] so they can be trained, plus
//! plain wrappers that evaluate them on a fixed [`EmbeddingTable`].

use diffcore::{Tape, Tensor, Var};

use super::EmbeddingTable;
use crate::error::{DldaError, Result};
use crate::pairwise::{log_mean_exp_neg, pair_sq_dists};

/// Minimized BPR: `mean(-ln sigmoid(e_u.e_i - e_u.e_j))`. Inputs are `[B, d]`
/// rows for users, positives and negatives.
pub fn bpr_term(tape: &mut Tape, eu: Var, ei: Var, ej: Var) -> Result<Var> {
    let pi = tape.mul(eu, ei)?;
    let pos = tape.sum_lastdim(pi)?;
    let pj = tape.mul(eu, ej)?;
    let neg = tape.sum_lastdim(pj)?;
    let diff = tape.sub(pos, neg)?;
    let sig = tape.sigmoid(diff)?;
    let ln = tape.log(sig)?;
    let m = tape.mean(ln)?;
    Ok(tape.scale(m, -1.0)?)
}

/// Sum of squared norms of every row in `parts`, times `weight`.
pub fn l2_penalty(tape: &mut Tape, parts: &[Var], weight: f64) -> Result<Var> {
    let mut total: Option<Var> = None;
    for &p in parts {
        let n = tape.l2norm_sq(p)?;
        let s = tape.sum(n)?;
        total = Some(match total {
            Some(t) => tape.add(t, s)?,
            None => s,
        });
    }
    let total = match total {
        Some(t) => t,
        None => tape.leaf(Tensor::scalar(0.0))?,
    };
    Ok(tape.scale(total, weight)?)
}

/// Projects each row of `[B, d]` onto the unit sphere.
pub fn normalize_rows(tape: &mut Tape, x: Var) -> Result<Var> {
    let n2 = tape.l2norm_sq(x)?;
    if let Some(row) = tape.value(n2).data().iter().position(|&v| v == 0.0) {
        return Err(DldaError::invalid(format!("row {row} has zero norm and cannot be normalized")));
    }
    let b = tape.value(x).rows();
    let ln = tape.log(n2)?;
    let half = tape.scale(ln, -0.5)?;
    let inv = tape.exp(half)?;
    let col = tape.reshape(inv, [b, 1])?;
    Ok(tape.mul(x, col)?)
}

/// Mean squared distance between normalized positive pairs.
pub fn align_term(tape: &mut Tape, eu: Var, ei: Var) -> Result<Var> {
    let fu = normalize_rows(tape, eu)?;
    let fi = normalize_rows(tape, ei)?;
    let diff = tape.sub(fu, fi)?;
    let d = tape.l2norm_sq(diff)?;
    Ok(tape.mean(d)?)
}

/// `log(mean_{i != j} exp(-2 ||f(x_i) - f(x_j)||^2)) / 2` over the rows of
/// `x`. Fewer than two rows contribute zero.
pub fn uniform_side(tape: &mut Tape, x: Var) -> Result<Var> {
    if tape.value(x).rows() < 2 {
        return Ok(tape.leaf(Tensor::scalar(0.0))?);
    }
    let f = normalize_rows(tape, x)?;
    let d = pair_sq_dists(tape, f)?;
    let l = log_mean_exp_neg(tape, d, 2.0)?;
    Ok(tape.scale(l, 0.5)?)
}

pub(crate) fn distinct(ids: impl IntoIterator<Item = usize>) -> Vec<usize> {
    let mut v: Vec<usize> = ids.into_iter().collect();
    v.sort_unstable();
    v.dedup();
    v
}

fn rows_leaf(tape: &mut Tape, rows: Vec<&[f64]>, d: usize) -> Result<Var> {
    let data: Vec<f64> = rows.into_iter().flatten().copied().collect();
    let n = data.len() / d;
    Ok(tape.leaf(Tensor::matrix(n, d, data)?)?)
}

/// BPR over `(u, i, j)` triples plus `lambda_reg` times the squared norm of
/// every embedding row touched by the batch.
pub fn bpr_loss(table: &EmbeddingTable, triples: &[(usize, usize, usize)], lambda_reg: f64) -> Result<f64> {
    if triples.is_empty() {
        return Err(DldaError::invalid("bpr_loss needs at least one triple"));
    }
    let d = table.dim();
    let mut t = Tape::new();
    let eu = rows_leaf(&mut t, triples.iter().map(|x| table.user(x.0)).collect(), d)?;
    let ei = rows_leaf(&mut t, triples.iter().map(|x| table.item(x.1)).collect(), d)?;
    let ej = rows_leaf(&mut t, triples.iter().map(|x| table.item(x.2)).collect(), d)?;
    let rec = bpr_term(&mut t, eu, ei, ej)?;
    let reg = l2_penalty(&mut t, &[eu, ei, ej], lambda_reg)?;
    let l = t.add(rec, reg)?;
    Ok(t.value(l).item())
}

pub fn align_loss(table: &EmbeddingTable, pairs: &[(usize, usize)]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(DldaError::invalid("align_loss needs at least one pair"));
    }
    let d = table.dim();
    let mut t = Tape::new();
    let eu = rows_leaf(&mut t, pairs.iter().map(|p| table.user(p.0)).collect(), d)?;
    let ei = rows_leaf(&mut t, pairs.iter().map(|p| table.item(p.1)).collect(), d)?;
    let l = align_term(&mut t, eu, ei)?;
    Ok(t.value(l).item())
}

/// Uniformity of the distinct users plus that of the distinct items.
pub fn uniform_loss(table: &EmbeddingTable, users: &[usize], items: &[usize]) -> Result<f64> {
    let d = table.dim();
    let mut t = Tape::new();
    let us = distinct(users.iter().copied());
    let is = distinct(items.iter().copied());
    let xu = rows_leaf(&mut t, us.iter().map(|&u| table.user(u)).collect(), d)?;
    let xi = rows_leaf(&mut t, is.iter().map(|&i| table.item(i)).collect(), d)?;
    let lu = uniform_side(&mut t, xu)?;
    let li = uniform_side(&mut t, xi)?;
    let l = t.add(lu, li)?;
    Ok(t.value(l).item())
}
