use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::error::{DldaError, Result};
use crate::rng::rng_from_seed;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Popularity {
    Popular,
    Unpopular,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TargetSet {
    pub items: Vec<usize>,
    pub class: Popularity,
}

impl TargetSet {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn contains(&self, item: usize) -> bool {
        self.items.contains(&item)
    }
}

/// Items ordered by ascending training popularity, ties by index.
pub fn popularity_order(d: &Dataset) -> Vec<usize> {
    let deg = d.item_degrees();
    let mut order: Vec<usize> = (0..d.item_count()).collect();
    order.sort_by_key(|&i| (deg[i], i));
    order
}

/// Samples `k` targets uniformly from the bottom (unpopular) or top
/// (popular) decile of items by interaction count in `d`. The pool grows
/// to `k` items when a decile is smaller than `k`.
pub fn select_targets(d: &Dataset, k: usize, class: Popularity, seed: u64) -> Result<TargetSet> {
    let n = d.item_count();
    if k > n {
        return Err(DldaError::invalid(format!("{k} targets requested from {n} items")));
    }
    let pool_size = n.div_ceil(10).max(k);
    let order = popularity_order(d);
    let pool: Vec<usize> = match class {
        Popularity::Unpopular => order[..pool_size].to_vec(),
        Popularity::Popular => order[n - pool_size..].to_vec(),
    };
    let mut items: Vec<usize> = rand::seq::index::sample(&mut rng_from_seed(seed), pool.len(), k)
        .into_iter()
        .map(|p| pool[p])
        .collect();
    items.sort_unstable();
    Ok(TargetSet { items, class })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn skewed() -> Dataset {
        // item i has i interactions for i in 0..20
        let mut pairs = Vec::new();
        for i in 0..20 {
            for u in 0..i {
                pairs.push((u, i));
            }
        }
        Dataset::from_pairs(20, 20, &pairs).unwrap()
    }

    #[test]
    fn unpopular_pool_is_bottom_decile() {
        let d = skewed();
        for seed in 0..20 {
            let t = select_targets(&d, 2, Popularity::Unpopular, seed).unwrap();
            assert_eq!(t.len(), 2);
            assert!(t.items.iter().all(|&i| i < 2), "{:?}", t.items);
        }
        // item 0 has no interactions and is eligible
        let t = select_targets(&d, 2, Popularity::Unpopular, 0).unwrap();
        assert!(t.contains(0));
    }

    #[test]
    fn popular_pool_is_top_decile() {
        let d = skewed();
        let t = select_targets(&d, 2, Popularity::Popular, 4).unwrap();
        assert_eq!(t.items, vec![18, 19]);
    }

    #[test]
    fn five_targets_deterministic() {
        let d = skewed();
        let a = select_targets(&d, 5, Popularity::Unpopular, 8).unwrap();
        let b = select_targets(&d, 5, Popularity::Unpopular, 8).unwrap();
        assert_eq!(a.len(), 5);
        assert_eq!(a, b);
    }

    #[test]
    fn too_many_targets_rejected() {
        assert!(select_targets(&skewed(), 21, Popularity::Popular, 0).is_err());
    }
}
