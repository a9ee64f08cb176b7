use rand::Rng;
use rand::distr::weighted::WeightedIndex;
use rand_distr::Distribution;
use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::error::{DldaError, Result};
use crate::rng::rng_from_seed;

/// Block-structured implicit feedback with a long-tailed item popularity.
///
/// Users and items are split evenly into `blocks` groups. Each interaction
/// of a user comes from the user's own item block with probability
/// `in_block`, otherwise from any item. Within a pool, item `r` (by rank)
/// is drawn with weight `1 / (r + 1)^zipf`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticSpec {
    pub users: usize,
    pub items: usize,
    pub blocks: usize,
    pub interactions_per_user: usize,
    pub in_block: f64,
    pub zipf: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            users: 500,
            items: 200,
            blocks: 2,
            interactions_per_user: 20,
            in_block: 0.9,
            zipf: 1.0,
            seed: 7,
        }
    }
}

impl SyntheticSpec {
    pub fn block_of_user(&self, u: usize) -> usize {
        u * self.blocks / self.users
    }

    pub fn block_of_item(&self, i: usize) -> usize {
        i * self.blocks / self.items
    }

    pub fn validate(&self) -> Result<()> {
        if self.users == 0 || self.items == 0 {
            return Err(DldaError::invalid("synthetic dataset needs users and items"));
        }
        if self.blocks == 0 || self.blocks > self.items || self.blocks > self.users {
            return Err(DldaError::invalid(format!("bad block count {}", self.blocks)));
        }
        let per_block = self.items / self.blocks;
        if self.interactions_per_user == 0 || self.interactions_per_user > per_block {
            return Err(DldaError::invalid(format!(
                "interactions_per_user must be in 1..={per_block}"
            )));
        }
        if !(0.0..=1.0).contains(&self.in_block) || !(self.zipf >= 0.0) {
            return Err(DldaError::invalid("in_block must be in [0,1] and zipf >= 0"));
        }
        Ok(())
    }

    pub fn generate(&self) -> Result<Dataset> {
        self.validate()?;
        let mut rng = rng_from_seed(self.seed);
        let weights = |n: usize| -> Vec<f64> {
            (0..n).map(|r| 1.0 / ((r + 1) as f64).powf(self.zipf)).collect()
        };
        let block_items: Vec<Vec<usize>> = (0..self.blocks)
            .map(|b| (0..self.items).filter(|&i| self.block_of_item(i) == b).collect())
            .collect();
        let block_dists: Vec<WeightedIndex<f64>> = block_items
            .iter()
            .map(|items| WeightedIndex::new(weights(items.len())).expect("positive weights"))
            .collect();
        let global = WeightedIndex::new(weights(self.items)).expect("positive weights");

        let mut pairs = Vec::with_capacity(self.users * self.interactions_per_user);
        let mut seen = vec![false; self.items];
        for u in 0..self.users {
            let b = self.block_of_user(u);
            let mut row = Vec::with_capacity(self.interactions_per_user);
            while row.len() < self.interactions_per_user {
                let item = if rng.random::<f64>() < self.in_block {
                    block_items[b][block_dists[b].sample(&mut rng)]
                } else {
                    global.sample(&mut rng)
                };
                if !seen[item] {
                    seen[item] = true;
                    row.push(item);
                }
            }
            for &i in &row {
                seen[i] = false;
            }
            pairs.extend(row.into_iter().map(|i| (u, i)));
        }
        Dataset::from_pairs(self.users, self.items, &pairs)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_and_activity() {
        let spec = SyntheticSpec::default();
        let d = spec.generate().unwrap();
        assert_eq!(d.user_count(), 500);
        assert_eq!(d.item_count(), 200);
        assert!(d.user_degrees().iter().all(|&k| k == 20));
    }

    #[test]
    fn block_preference_dominates() {
        let spec = SyntheticSpec::default();
        let d = spec.generate().unwrap();
        let inside = d
            .interactions()
            .iter()
            .filter(|&&(u, i)| spec.block_of_user(u) == spec.block_of_item(i))
            .count();
        assert!(inside as f64 / d.len() as f64 > 0.85);
    }

    #[test]
    fn popularity_is_long_tailed() {
        let d = SyntheticSpec::default().generate().unwrap();
        let deg = d.item_degrees();
        assert!(deg[0] > 5 * deg[99].max(1));
    }

    #[test]
    fn seeded() {
        let s = SyntheticSpec::default();
        assert_eq!(s.generate().unwrap(), s.generate().unwrap());
        let other = SyntheticSpec { seed: 8, ..s.clone() };
        assert_ne!(s.generate().unwrap(), other.generate().unwrap());
    }

    #[test]
    fn rejects_impossible_activity() {
        let s = SyntheticSpec {
            items: 10,
            interactions_per_user: 6,
            ..Default::default()
        };
        assert!(s.generate().is_err());
    }
}
