use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{DldaError, Result};
use crate::recommender::{top_k, EmbeddingTable};

fn mean(values: Vec<f64>) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    // sequential sum keeps the result independent of the thread count
    values.iter().sum::<f64>() / values.len() as f64
}

/// Fraction of `users` whose top-`k` list (with `exclude[u]` removed from
/// the candidates) contains at least one of `targets`.
///
/// `exclude` is indexed by user id.
pub fn hit_at_k(victim: &EmbeddingTable, users: &[usize], targets: &[usize], k: usize, exclude: &[Vec<usize>]) -> f64 {
    let hits: Vec<f64> = users
        .par_iter()
        .map(|&u| {
            let top = top_k(victim, u, k, &exclude[u]);
            if top.iter().any(|i| targets.contains(i)) {
                1.0
            } else {
                0.0
            }
        })
        .collect();
    mean(hits)
}

/// Binary-relevance NDCG of one ranked list.
pub fn ndcg_of_list(ranked: &[usize], relevant: &[usize], k: usize) -> f64 {
    let ideal = relevant.len().min(k);
    if ideal == 0 {
        return 0.0;
    }
    let gain = |r: usize| 1.0 / ((r + 2) as f64).log2();
    let dcg: f64 = ranked
        .iter()
        .take(k)
        .enumerate()
        .filter(|(_, i)| relevant.contains(i))
        .map(|(r, _)| gain(r))
        .sum();
    let idcg: f64 = (0..ideal).map(gain).sum();
    dcg / idcg
}

/// Mean NDCG@k over `users`; `relevant[j]` belongs to `users[j]`, while
/// `exclude` is indexed by user id.
pub fn ndcg_at_k(
    victim: &EmbeddingTable,
    users: &[usize],
    relevant: &[Vec<usize>],
    k: usize,
    exclude: &[Vec<usize>],
) -> f64 {
    let vals: Vec<f64> = users
        .par_iter()
        .zip(relevant)
        .map(|(&u, rel)| ndcg_of_list(&top_k(victim, u, k, &exclude[u]), rel, k))
        .collect();
    mean(vals)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricBlock {
    pub k: usize,
    pub target_hit: f64,
    pub target_ndcg: f64,
    pub global_hit: f64,
    pub global_ndcg: f64,
}

impl MetricBlock {
    pub fn delta(&self, clean: &MetricBlock) -> MetricBlock {
        MetricBlock {
            k: self.k,
            target_hit: self.target_hit - clean.target_hit,
            target_ndcg: self.target_ndcg - clean.target_ndcg,
            global_hit: self.global_hit - clean.global_hit,
            global_ndcg: self.global_ndcg - clean.global_ndcg,
        }
    }

    /// Elementwise mean of blocks sharing one `k`.
    pub fn mean(blocks: &[MetricBlock]) -> Option<MetricBlock> {
        let first = blocks.first()?;
        let n = blocks.len() as f64;
        let avg = |f: fn(&MetricBlock) -> f64| blocks.iter().map(f).sum::<f64>() / n;
        Some(MetricBlock {
            k: first.k,
            target_hit: avg(|b| b.target_hit),
            target_ndcg: avg(|b| b.target_ndcg),
            global_hit: avg(|b| b.global_hit),
            global_ndcg: avg(|b| b.global_ndcg),
        })
    }
}

/// Held-out ground truth for one split: the real users to evaluate and
/// their positives.
#[derive(Clone, Debug)]
pub struct EvalSplit {
    /// Real users with at least one held-out interaction, ascending.
    pub users: Vec<usize>,
    /// Held-out items of `users[j]`.
    pub held_out: Vec<Vec<usize>>,
    /// Training positives, indexed by user id.
    pub train_items: Vec<Vec<usize>>,
    /// Fingerprint of the split, checked by [`global_delta`].
    pub hash: String,
}

impl EvalSplit {
    pub fn new(train: &crate::data::Dataset, test: &crate::data::Dataset) -> Self {
        let test_items = test.user_items();
        let users: Vec<usize> = (0..test.user_count()).filter(|&u| !test_items[u].is_empty()).collect();
        let held_out = users.iter().map(|&u| test_items[u].clone()).collect();
        let hash = format!("{}:{}", train.fingerprint(), test.fingerprint());
        Self {
            users,
            held_out,
            train_items: train.user_items(),
            hash,
        }
    }
}

/// Target and global metrics of one victim at every cutoff in `ks`. Only
/// the split's real users are ranked, so fake rows of a poisoned victim are
/// never read as test users.
pub fn evaluate_ranking(victim: &EmbeddingTable, split: &EvalSplit, targets: &[usize], ks: &[usize]) -> Vec<MetricBlock> {
    let target_rel: Vec<Vec<usize>> = split
        .users
        .iter()
        .map(|&u| targets.iter().copied().filter(|t| !split.train_items[u].contains(t)).collect())
        .collect();
    ks.iter()
        .map(|&k| MetricBlock {
            k,
            target_hit: hit_at_k(victim, &split.users, targets, k, &split.train_items),
            target_ndcg: ndcg_at_k(victim, &split.users, &target_rel, k, &split.train_items),
            global_hit: global_hit(victim, split, k),
            global_ndcg: ndcg_at_k(victim, &split.users, &split.held_out, k, &split.train_items),
        })
        .collect()
}

fn global_hit(victim: &EmbeddingTable, split: &EvalSplit, k: usize) -> f64 {
    let hits: Vec<f64> = split
        .users
        .par_iter()
        .zip(&split.held_out)
        .map(|(&u, rel)| {
            let top = top_k(victim, u, k, &split.train_items[u]);
            if top.iter().any(|i| rel.contains(i)) {
                1.0
            } else {
                0.0
            }
        })
        .collect();
    mean(hits)
}

/// Metrics of one victim tagged with the split they were computed on.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankingResult {
    pub split_hash: String,
    pub blocks: Vec<MetricBlock>,
}

/// `poisoned - clean`, block by block.
pub fn global_delta(clean: &RankingResult, poisoned: &RankingResult) -> Result<Vec<MetricBlock>> {
    if clean.split_hash != poisoned.split_hash {
        return Err(DldaError::invalid("clean and poisoned metrics come from different splits"));
    }
    if clean.blocks.len() != poisoned.blocks.len() || clean.blocks.iter().zip(&poisoned.blocks).any(|(a, b)| a.k != b.k) {
        return Err(DldaError::invalid("clean and poisoned metrics use different cutoffs"));
    }
    Ok(poisoned.blocks.iter().zip(&clean.blocks).map(|(p, c)| p.delta(c)).collect())
}
