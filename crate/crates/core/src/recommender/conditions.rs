use rand::Rng;
use serde::{Deserialize, Serialize};

use super::EmbeddingTable;
use crate::data::{Dataset, TargetSet};
use crate::rng::{rng_from_seed, StageRng};

/// One conditioning request: a target item and a real user anchored to it.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConditionPair {
    pub user: usize,
    pub item: usize,
    /// True when no real user interacted with `item` and the nearest user by
    /// cosine similarity stands in.
    pub fallback: bool,
}

/// For every target, the users that may anchor it.
#[derive(Clone, Debug, PartialEq)]
pub struct ConditionPool {
    entries: Vec<(usize, Vec<usize>, bool)>,
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return f64::NEG_INFINITY;
    }
    dot / (na * nb)
}

/// Index of the user whose embedding is most cosine-similar to `item`.
pub fn nearest_user(table: &EmbeddingTable, item: usize) -> usize {
    let ei = table.item(item);
    let mut best = (f64::NEG_INFINITY, 0);
    for u in 0..table.user_count() {
        let c = cosine(table.user(u), ei);
        if c > best.0 {
            best = (c, u);
        }
    }
    best.1
}

impl ConditionPool {
    pub fn build(table: &EmbeddingTable, view: &Dataset, targets: &TargetSet) -> Self {
        let item_users = view.item_users();
        let entries = targets
            .items
            .iter()
            .map(|&i| {
                let mut users = item_users[i].clone();
                users.sort_unstable();
                if users.is_empty() {
                    (i, vec![nearest_user(table, i)], true)
                } else {
                    (i, users, false)
                }
            })
            .collect();
        Self { entries }
    }

    /// Uniform target, then a uniform user among that target's anchors.
    pub fn draw(&self, rng: &mut StageRng) -> ConditionPair {
        let (item, users, fallback) = &self.entries[rng.random_range(0..self.entries.len())];
        ConditionPair {
            user: users[rng.random_range(0..users.len())],
            item: *item,
            fallback: *fallback,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// `count` condition pairs drawn from one seeded stream.
pub fn select_conditions(
    table: &EmbeddingTable,
    view: &Dataset,
    targets: &TargetSet,
    count: usize,
    seed: u64,
) -> Vec<ConditionPair> {
    let pool = ConditionPool::build(table, view, targets);
    if pool.is_empty() {
        return Vec::new();
    }
    let mut rng = rng_from_seed(seed);
    (0..count).map(|_| pool.draw(&mut rng)).collect()
}

/// The top `fraction` of users by interaction count in `d` (at least one),
/// ties by ascending index.
pub fn high_activity_users(d: &Dataset, fraction: f64) -> Vec<usize> {
    let deg = d.user_degrees();
    let mut order: Vec<usize> = (0..d.user_count()).collect();
    order.sort_by(|&a, &b| deg[b].cmp(&deg[a]).then(a.cmp(&b)));
    let keep = ((fraction * d.user_count() as f64).ceil() as usize).clamp(1, d.user_count().max(1));
    order.truncate(keep);
    order.retain(|&u| deg[u] > 0);
    order
}
