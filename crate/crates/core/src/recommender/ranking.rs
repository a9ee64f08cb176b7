use std::cmp::Ordering;

use super::EmbeddingTable;

/// Orders `(score, index)` by descending score, then ascending index.
/// Adding 0.0 maps -0.0 to 0.0, so the two zeros tie under `total_cmp`.
pub(crate) fn rank_order(a: &(f64, usize), b: &(f64, usize)) -> Ordering {
    (b.0 + 0.0).total_cmp(&(a.0 + 0.0)).then(a.1.cmp(&b.1))
}

/// The `k` best items of a score vector, skipping `exclude` (sorted or not).
pub fn top_k_scores(scores: &[f64], k: usize, exclude: &[usize]) -> Vec<usize> {
    let mut skip = vec![false; scores.len()];
    for &i in exclude {
        if i < skip.len() {
            skip[i] = true;
        }
    }
    let mut cand: Vec<(f64, usize)> = scores
        .iter()
        .enumerate()
        .filter(|(i, _)| !skip[*i])
        .map(|(i, &s)| (s, i))
        .collect();
    let k = k.min(cand.len());
    if k == 0 {
        return Vec::new();
    }
    if k < cand.len() {
        cand.select_nth_unstable_by(k - 1, rank_order);
        cand.truncate(k);
    }
    cand.sort_unstable_by(rank_order);
    cand.into_iter().map(|(_, i)| i).collect()
}

/// Highest-scoring `k` items for `user` by `e_u . e_i`, excluding the
/// user's training positives; ties go to the lower item index.
pub fn top_k(table: &EmbeddingTable, user: usize, k: usize, exclude: &[usize]) -> Vec<usize> {
    top_k_scores(&table.scores(user), k, exclude)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ties_break_by_index() {
        assert_eq!(top_k_scores(&[1.0; 6], 3, &[]), vec![0, 1, 2]);
    }

    #[test]
    fn signed_zeros_tie() {
        assert_eq!(top_k_scores(&[-0.0, 0.0, -1.0], 2, &[]), vec![0, 1]);
        assert_eq!(top_k_scores(&[0.0, -0.0, -1.0], 2, &[]), vec![0, 1]);
    }

    #[test]
    fn simple_sort() {
        assert_eq!(top_k_scores(&[0.1, 0.9, 0.5], 2, &[]), vec![1, 2]);
    }

    #[test]
    fn exclusions_skipped() {
        assert_eq!(top_k_scores(&[0.1, 0.9, 0.5], 2, &[1]), vec![2, 0]);
        assert_eq!(top_k_scores(&[0.1, 0.9], 5, &[0, 1]), Vec::<usize>::new());
    }
}
