//! Bulk statistics of the Poisson projection. Shared by the core test
//! target and the acceptance target.

use dlda::data::{Popularity, TargetSet};
use dlda::projection::{project_profile, ProjectionConfig};
use dlda::recommender::EmbeddingTable;
use dlda::rng::{child_seed, normal_vec, rng_from_seed};

pub struct ProjectionStats {
    pub rows: usize,
    pub mean_active: f64,
    pub target_rows: usize,
    pub max_row: usize,
}

pub fn targets() -> TargetSet {
    TargetSet {
        items: vec![3, 77, 150],
        class: Popularity::Unpopular,
    }
}

/// Projects `rows` random latents against a random 200-item table.
pub fn projection_stats(config: &ProjectionConfig, rows: usize, seed: u64) -> ProjectionStats {
    let (items, d) = (200, 8);
    let mut rng = rng_from_seed(seed);
    let table = EmbeddingTable::new(d, normal_vec(&mut rng, d), normal_vec(&mut rng, items * d)).unwrap();
    let targets = targets();
    let mut stats = ProjectionStats {
        rows,
        mean_active: 0.0,
        target_rows: 0,
        max_row: 0,
    };
    for k in 0..rows {
        let mut row_rng = rng_from_seed(child_seed(seed, k as u64));
        let z = normal_vec(&mut row_rng, d);
        let p = project_profile(&z, &table, config, &targets, &mut row_rng);
        stats.mean_active += p.active as f64;
        if targets.items.iter().all(|t| p.items.binary_search(t).is_ok()) {
            stats.target_rows += 1;
        }
        stats.max_row = stats.max_row.max(p.items.len());
    }
    stats.mean_active /= rows as f64;
    stats
}
