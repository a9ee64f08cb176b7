use std::sync::Arc;

use diffcore::{Adam, AdamConfig, ParamId, ParamStore, SparseMatrix, Tape, Tensor, Var};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::losses::{align_term, bpr_term, distinct, l2_penalty, uniform_side};
use super::{propagate, EmbeddingTable, ModelKind, NormalizedGraph};
use crate::data::Dataset;
use crate::error::{Checkpoint, DldaError, Result};
use crate::rng::{normal_vec, rng_from_seed, StageRng};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RecommenderConfig {
    pub dim: usize,
    pub layers: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub lambda_reg: f64,
    pub lambda_au: f64,
    pub model: ModelKind,
    /// Standard deviation of the normal initialization.
    pub init_std: f64,
}

impl Default for RecommenderConfig {
    fn default() -> Self {
        Self {
            dim: 64,
            layers: 2,
            lr: 0.005,
            batch_size: 64,
            epochs: 30,
            lambda_reg: 1e-4,
            lambda_au: 0.1,
            model: ModelKind::Lightgcn,
            init_std: 0.1,
        }
    }
}

impl RecommenderConfig {
    /// Propagation depth actually used; MF never propagates.
    pub fn effective_layers(&self) -> usize {
        match self.model {
            ModelKind::Mf => 0,
            ModelKind::Lightgcn => self.layers,
        }
    }

    pub fn validate(&self, path: &str) -> Result<()> {
        let bad = |field: &str, message: String| DldaError::Config {
            path: format!("{path}.{field}"),
            message,
        };
        if self.dim == 0 {
            return Err(bad("dim", "must be positive".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(bad("lr", format!("must be positive, got {}", self.lr)));
        }
        if self.batch_size == 0 {
            return Err(bad("batch_size", "must be positive".into()));
        }
        if !(self.lambda_reg >= 0.0 && self.lambda_reg.is_finite()) {
            return Err(bad("lambda_reg", format!("must be >= 0, got {}", self.lambda_reg)));
        }
        if !(self.lambda_au >= 0.0 && self.lambda_au.is_finite()) {
            return Err(bad("lambda_au", format!("must be >= 0, got {}", self.lambda_au)));
        }
        if !(self.init_std > 0.0 && self.init_std.is_finite()) {
            return Err(bad("init_std", format!("must be positive, got {}", self.init_std)));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub epoch: usize,
    pub loss: f64,
    pub bpr: f64,
}

#[derive(Clone, Debug)]
pub struct TrainedRecommender {
    /// Propagated embeddings used for scoring.
    pub table: EmbeddingTable,
    pub curve: Vec<EpochLoss>,
}

/// Parameter ids plus the constant graph; owns no parameter values.
struct LossGraph {
    users: ParamId,
    items: ParamId,
    adj: Option<Arc<SparseMatrix>>,
    layers: usize,
    m: usize,
    n: usize,
}

impl LossGraph {
    fn new(users: ParamId, items: ParamId, graph: &NormalizedGraph, layers: usize) -> Self {
        Self {
            users,
            items,
            adj: (layers > 0).then(|| graph.to_sparse()),
            layers,
            m: graph.users(),
            n: graph.items(),
        }
    }

    /// Returns (propagated users, propagated items, raw users, raw items).
    fn embed(&self, tape: &mut Tape, store: &ParamStore) -> Result<(Var, Var, Var, Var)> {
        let u0 = tape.param(store, self.users)?;
        let i0 = tape.param(store, self.items)?;
        let Some(adj) = &self.adj else {
            return Ok((u0, i0, u0, i0));
        };
        let all = tape.concat(&[u0, i0], 0)?;
        let mut layer = all;
        let mut acc = all;
        for _ in 0..self.layers {
            layer = tape.spmm(adj.clone(), layer)?;
            acc = tape.add(acc, layer)?;
        }
        let mean = tape.scale(acc, 1.0 / (self.layers + 1) as f64)?;
        let pu = tape.slice(mean, 0, 0, self.m)?;
        let pi = tape.slice(mean, 0, self.m, self.n)?;
        Ok((pu, pi, u0, i0))
    }

    /// Returns (total loss, BPR term).
    fn batch_loss(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        config: &RecommenderConfig,
        triples: &[(usize, usize, usize)],
    ) -> Result<(Var, Var)> {
        let (pu, pi, u0, i0) = self.embed(tape, store)?;
        let us: Vec<usize> = triples.iter().map(|t| t.0).collect();
        let is: Vec<usize> = triples.iter().map(|t| t.1).collect();
        let js: Vec<usize> = triples.iter().map(|t| t.2).collect();

        let eu = tape.gather_rows(pu, us.clone())?;
        let ei = tape.gather_rows(pi, is.clone())?;
        let ej = tape.gather_rows(pi, js.clone())?;
        let bpr = bpr_term(tape, eu, ei, ej)?;

        let ru = tape.gather_rows(u0, us.clone())?;
        let ri = tape.gather_rows(i0, is.clone())?;
        let rj = tape.gather_rows(i0, js)?;
        let reg = l2_penalty(tape, &[ru, ri, rj], config.lambda_reg)?;
        let mut loss = tape.add(bpr, reg)?;

        if config.lambda_au > 0.0 {
            let align = align_term(tape, eu, ei)?;
            let du = tape.gather_rows(pu, distinct(us))?;
            let di = tape.gather_rows(pi, distinct(is))?;
            let uu = uniform_side(tape, du)?;
            let ui = uniform_side(tape, di)?;
            let au = tape.add(align, uu)?;
            let au = tape.add(au, ui)?;
            let weighted = tape.scale(au, config.lambda_au)?;
            loss = tape.add(loss, weighted)?;
        }
        Ok((loss, bpr))
    }
}

fn raw_table(store: &ParamStore, g: &LossGraph, d: usize) -> EmbeddingTable {
    EmbeddingTable::new(d, store.value(g.users).data().to_vec(), store.value(g.items).data().to_vec())
        .expect("parameter shapes match")
}

fn sample_negative(rng: &mut StageRng, positives: &[usize], n: usize) -> Option<usize> {
    if positives.len() >= n {
        return None;
    }
    loop {
        let j = rng.random_range(0..n);
        if positives.binary_search(&j).is_err() {
            return Some(j);
        }
    }
}

/// Mini-batch Adam on `BPR + lambda_reg * L2 + lambda_au * (align + uniform)`.
///
/// Each epoch reshuffles the training pairs; each pair draws one uniform
/// negative. Returns the propagated embeddings and the per-epoch mean loss.
pub fn pretrain(config: &RecommenderConfig, train: &Dataset, seed: u64) -> Result<TrainedRecommender> {
    config.validate("recommender")?;
    if train.is_empty() {
        return Err(DldaError::EmptyDataset);
    }
    let (m, n, d) = (train.user_count(), train.item_count(), config.dim);
    let mut rng = rng_from_seed(seed);
    let mut store = ParamStore::new();
    let scale = |v: Vec<f64>| v.into_iter().map(|x| x * config.init_std).collect::<Vec<_>>();
    let (users, items) = embedding_params(
        &mut store,
        Tensor::matrix(m, d, scale(normal_vec(&mut rng, m * d)))?,
        Tensor::matrix(n, d, scale(normal_vec(&mut rng, n * d)))?,
    );
    let graph = NormalizedGraph::from_dataset(train);
    let layers = config.effective_layers();
    let lg = LossGraph::new(users, items, &graph, layers);
    let mut adam = Adam::new(AdamConfig {
        lr: config.lr,
        ..AdamConfig::default()
    });

    let mut positives = train.user_items();
    positives.iter_mut().for_each(|p| p.sort_unstable());
    let mut order: Vec<(usize, usize)> = train.interactions().to_vec();
    let mut curve = Vec::with_capacity(config.epochs);
    let mut last_good = raw_table(&store, &lg, d);

    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let (mut sum, mut sum_bpr, mut batches) = (0.0, 0.0, 0usize);
        for chunk in order.chunks(config.batch_size) {
            let mut triples = Vec::with_capacity(chunk.len());
            for &(u, i) in chunk {
                if let Some(j) = sample_negative(&mut rng, &positives[u], n) {
                    triples.push((u, i, j));
                }
            }
            if triples.is_empty() {
                continue;
            }
            let step = train_step(&lg, &mut store, &mut adam, config, &triples);
            let (loss, bpr) = match step {
                Ok(v) => v,
                Err(e) => {
                    return Err(diverged(epoch, e.to_string(), &last_good, &graph, layers));
                }
            };
            sum += loss;
            sum_bpr += bpr;
            batches += 1;
        }
        let mean = sum / batches.max(1) as f64;
        if !mean.is_finite() {
            return Err(diverged(epoch, "non-finite epoch loss".into(), &last_good, &graph, layers));
        }
        log::debug!("recommender epoch {epoch}: loss {mean:.6}");
        curve.push(EpochLoss {
            epoch,
            loss: mean,
            bpr: sum_bpr / batches.max(1) as f64,
        });
        last_good = raw_table(&store, &lg, d);
    }

    Ok(TrainedRecommender {
        table: propagate(&raw_table(&store, &lg, d), &graph, layers),
        curve,
    })
}

fn diverged(
    epoch: usize,
    reason: String,
    last_good: &EmbeddingTable,
    graph: &NormalizedGraph,
    layers: usize,
) -> DldaError {
    DldaError::Diverged {
        stage: "recommender",
        epoch,
        reason,
        last_checkpoint: Some(Checkpoint::Embeddings(Box::new(propagate(last_good, graph, layers)))),
    }
}

fn train_step(
    lg: &LossGraph,
    store: &mut ParamStore,
    adam: &mut Adam,
    config: &RecommenderConfig,
    triples: &[(usize, usize, usize)],
) -> Result<(f64, f64)> {
    let mut tape = Tape::new();
    let (loss, bpr) = lg.batch_loss(&mut tape, store, config, triples)?;
    let value = tape.value(loss).item();
    let bpr_value = tape.value(bpr).item();
    store.zero_grad();
    tape.backward(loss, store)?;
    adam.step(store)?;
    Ok((value, bpr_value))
}

/// Registers `user_emb` and `item_emb` parameters in the layout [`pretrain`]
/// uses.
pub fn embedding_params(store: &mut ParamStore, users: Tensor, items: Tensor) -> (ParamId, ParamId) {
    (store.add("user_emb", users), store.add("item_emb", items))
}

/// The full pretraining loss of one batch of triples, on parameters
/// registered by [`embedding_params`]. Exposed for gradient checks.
pub fn pretrain_loss_on_tape(
    tape: &mut Tape,
    store: &ParamStore,
    graph: &NormalizedGraph,
    config: &RecommenderConfig,
    triples: &[(usize, usize, usize)],
) -> Result<Var> {
    let users = store.find("user_emb").ok_or_else(|| DldaError::invalid("missing user_emb"))?;
    let items = store.find("item_emb").ok_or_else(|| DldaError::invalid("missing item_emb"))?;
    let lg = LossGraph::new(users, items, graph, config.effective_layers());
    Ok(lg.batch_loss(tape, store, config, triples)?.0)
}
