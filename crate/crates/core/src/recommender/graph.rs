use std::sync::Arc;

use diffcore::SparseMatrix;

use super::EmbeddingTable;
use crate::data::Dataset;

/// `D^-1/2 A D^-1/2` over the user-item bipartite graph. Node `u` is user
/// `u`, node `M + i` is item `i`.
#[derive(Clone, Debug, PartialEq)]
pub struct NormalizedGraph {
    users: usize,
    items: usize,
    /// One entry per training edge: (user, item, 1/sqrt(deg(u) deg(i))).
    edges: Vec<(usize, usize, f64)>,
}

impl NormalizedGraph {
    pub fn from_dataset(d: &Dataset) -> Self {
        let du = d.user_degrees();
        let di = d.item_degrees();
        let edges = d
            .interactions()
            .iter()
            .map(|&(u, i)| (u, i, 1.0 / ((du[u] * di[i]) as f64).sqrt()))
            .collect();
        Self {
            users: d.user_count(),
            items: d.item_count(),
            edges,
        }
    }

    pub fn users(&self) -> usize {
        self.users
    }

    pub fn items(&self) -> usize {
        self.items
    }

    pub fn edges(&self) -> &[(usize, usize, f64)] {
        &self.edges
    }

    /// Symmetric `(M+N) x (M+N)` adjacency.
    pub fn to_sparse(&self) -> Arc<SparseMatrix> {
        let m = self.users;
        let n = m + self.items;
        let mut entries = Vec::with_capacity(2 * self.edges.len());
        for &(u, i, w) in &self.edges {
            entries.push((u, m + i, w));
            entries.push((m + i, u, w));
        }
        Arc::new(SparseMatrix::new(n, n, entries))
    }
}

/// LightGCN aggregation: mean of the layer-0..L embeddings, each layer one
/// multiplication by the normalized adjacency.
pub fn propagate(table: &EmbeddingTable, graph: &NormalizedGraph, layers: usize) -> EmbeddingTable {
    if layers == 0 {
        return table.clone();
    }
    let d = table.dim();
    let m = table.user_count();
    assert_eq!((m, table.item_count()), (graph.users, graph.items), "graph/table size mismatch");
    let adj = graph.to_sparse();
    let mut layer: Vec<f64> = table.user_data().iter().chain(table.item_data()).copied().collect();
    let mut acc = layer.clone();
    for _ in 0..layers {
        layer = adj.mul_dense(&layer, d);
        for (a, v) in acc.iter_mut().zip(&layer) {
            *a += v;
        }
    }
    let scale = 1.0 / (layers + 1) as f64;
    acc.iter_mut().for_each(|v| *v *= scale);
    let items = acc.split_off(m * d);
    EmbeddingTable::new(d, acc, items).expect("dimensions preserved")
}
