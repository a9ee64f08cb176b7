//! Brute-force reference for the ranking metrics. Shared by the core test
//! target and the acceptance target.

use dlda::evaluation::{hit_at_k, ndcg_at_k};
use dlda::recommender::EmbeddingTable;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// One random ranking problem. Small integer embeddings make tied scores
/// common.
pub struct Instance {
    pub table: EmbeddingTable,
    pub users: Vec<usize>,
    pub relevant: Vec<Vec<usize>>,
    pub targets: Vec<usize>,
    pub exclude: Vec<Vec<usize>>,
    pub k: usize,
}

fn subset(rng: &mut ChaCha8Rng, n: usize, p: f64) -> Vec<usize> {
    (0..n).filter(|_| rng.random_bool(p)).collect()
}

pub fn instance(seed: u64) -> Instance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = rng.random_range(1..=30);
    let n = rng.random_range(1..=25);
    let d = rng.random_range(1..=4);
    let mut cell = || rng.random_range(-2..=2) as f64;
    let users: Vec<f64> = (0..m * d).map(|_| cell()).collect();
    let items: Vec<f64> = (0..n * d).map(|_| cell()).collect();
    let table = EmbeddingTable::new(d, users, items).unwrap();
    let eval_users = subset(&mut rng, m, 0.7);
    let relevant = eval_users.iter().map(|_| subset(&mut rng, n, 0.2)).collect();
    let targets = subset(&mut rng, n, 0.15);
    let exclude = (0..m).map(|_| subset(&mut rng, n, 0.25)).collect();
    let k = rng.random_range(1..=10);
    Instance {
        table,
        users: eval_users,
        relevant,
        targets,
        exclude,
        k,
    }
}

/// Position of `item` in the user's full ranking, counting every
/// non-excluded item that beats it on score or wins the tie by index.
fn rank(scores: &[f64], excluded: &[usize], item: usize) -> usize {
    (0..scores.len())
        .filter(|j| !excluded.contains(j))
        .filter(|&j| scores[j] > scores[item] || (scores[j] == scores[item] && j < item))
        .count()
}

fn in_top(scores: &[f64], excluded: &[usize], k: usize) -> Vec<(usize, usize)> {
    let mut out: Vec<(usize, usize)> = (0..scores.len())
        .filter(|i| !excluded.contains(i))
        .map(|i| (rank(scores, excluded, i), i))
        .filter(|&(r, _)| r < k)
        .collect();
    out.sort();
    out
}

pub fn brute_hit(x: &Instance) -> f64 {
    if x.users.is_empty() {
        return 0.0;
    }
    let mut total = 0.0;
    for &u in &x.users {
        let top = in_top(&x.table.scores(u), &x.exclude[u], x.k);
        total += if top.iter().any(|(_, i)| x.targets.contains(i)) { 1.0 } else { 0.0 };
    }
    total / x.users.len() as f64
}

pub fn brute_ndcg(x: &Instance) -> f64 {
    if x.users.is_empty() {
        return 0.0;
    }
    let mut total = 0.0;
    for (&u, rel) in x.users.iter().zip(&x.relevant) {
        let top = in_top(&x.table.scores(u), &x.exclude[u], x.k);
        let dcg: f64 = top
            .iter()
            .filter(|(_, i)| rel.contains(i))
            .map(|&(r, _)| 1.0 / ((r + 2) as f64).log2())
            .sum();
        let ideal = rel.len().min(x.k);
        let idcg: f64 = (0..ideal).map(|r| 1.0 / ((r + 2) as f64).log2()).sum();
        total += if ideal == 0 { 0.0 } else { dcg / idcg };
    }
    total / x.users.len() as f64
}

/// Compares both metrics on `count` instances; returns the first mismatch.
pub fn check(first_seed: u64, count: u64) -> Result<(), String> {
    for seed in first_seed..first_seed + count {
        let x = instance(seed);
        let hit = hit_at_k(&x.table, &x.users, &x.targets, x.k, &x.exclude);
        let ndcg = ndcg_at_k(&x.table, &x.users, &x.relevant, x.k, &x.exclude);
        let (bh, bn) = (brute_hit(&x), brute_ndcg(&x));
        if hit != bh || ndcg != bn {
            return Err(format!("seed {seed}: hit {hit} vs {bh}, ndcg {ndcg} vs {bn}"));
        }
    }
    Ok(())
}
