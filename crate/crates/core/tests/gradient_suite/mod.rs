//! Finite-difference checks of every tape op and every training loss on
//! small random instances. Shared by the core test target and the
//! acceptance target.

use std::sync::Arc;

use diffcore::gradcheck::{self, DEFAULT_STEP};
use diffcore::{ParamStore, SparseMatrix, Tape, Tensor, Var};
use dlda::data::Dataset;
use dlda::diffusion::{diffusion_term, dispersive_term, total_loss_on_tape, Denoiser, DenoiserShape};
use dlda::recommender::{
    align_term, bpr_term, embedding_params, l2_penalty, pretrain_loss_on_tape, uniform_side, ModelKind,
    NormalizedGraph, RecommenderConfig,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const TOL: f64 = 1e-4;
const SEEDS: u64 = 3;

/// Worst relative error of one named check.
#[derive(Clone, Debug)]
pub struct Outcome {
    pub name: String,
    pub max_rel_err: f64,
}

fn random(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(lo..hi)).collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

fn rows(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Vec<Vec<f64>> {
    (0..n).map(|_| (0..d).map(|_| rng.random_range(-1.0..1.0)).collect()).collect()
}

fn weighted_sum(tape: &mut Tape, out: Var, weights: &Tensor) -> diffcore::Result<Var> {
    let w = tape.leaf(weights.reshape(tape.value(out).shape().to_vec())?)?;
    let prod = tape.mul(out, w)?;
    tape.sum(prod)
}

type Op = Arc<dyn Fn(&mut Tape, &[Var]) -> diffcore::Result<Var> + Send + Sync>;

/// Checks `op` on inputs of `shapes` drawn from `[lo, hi)`, reduced to a
/// scalar through fixed random weights.
fn check_op(name: &str, shapes: &[&[usize]], lo: f64, hi: f64, op: Op) -> Outcome {
    let mut worst: f64 = 0.0;
    for seed in 0..SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let ids: Vec<_> = shapes
            .iter()
            .enumerate()
            .map(|(k, s)| store.add(format!("x{k}"), random(&mut rng, s, lo, hi)))
            .collect();
        let out_len = {
            let mut t = Tape::new();
            let vars: Vec<Var> = ids.iter().map(|&id| t.param(&store, id).unwrap()).collect();
            let y = op(&mut t, &vars).unwrap();
            t.value(y).len()
        };
        let weights = random(&mut rng, &[out_len], -1.0, 1.0);
        let report = gradcheck::check(&mut store, DEFAULT_STEP, |t, s| {
            let vars = ids.iter().map(|&id| t.param(s, id)).collect::<diffcore::Result<Vec<_>>>()?;
            let y = op(t, &vars)?;
            weighted_sum(t, y, &weights)
        })
        .unwrap();
        worst = worst.max(report.max_rel_err());
    }
    Outcome {
        name: name.to_string(),
        max_rel_err: worst,
    }
}

fn tape_ops() -> Vec<Outcome> {
    let sparse = Arc::new(SparseMatrix::new(
        4,
        5,
        vec![(0, 1, 0.5), (1, 0, -1.0), (1, 4, 2.0), (3, 3, 0.25), (3, 1, 1.5)],
    ));
    let mut out = vec![
        check_op("matmul", &[&[3, 4], &[4, 2]], -2.0, 2.0, Arc::new(|t, v| t.matmul(v[0], v[1]))),
        check_op("transpose", &[&[3, 5]], -1.0, 1.0, Arc::new(|t, v| t.transpose(v[0]))),
        check_op("scale", &[&[2, 3]], -1.0, 1.0, Arc::new(|t, v| t.scale(v[0], -1.7))),
        check_op("sum", &[&[3, 4]], -1.0, 1.0, Arc::new(|t, v| t.sum(v[0]))),
        check_op("mean", &[&[3, 4]], -1.0, 1.0, Arc::new(|t, v| t.mean(v[0]))),
        check_op("sum_lastdim", &[&[3, 4]], -1.0, 1.0, Arc::new(|t, v| t.sum_lastdim(v[0]))),
        check_op("l2norm_sq", &[&[3, 4]], -1.0, 1.0, Arc::new(|t, v| t.l2norm_sq(v[0]))),
        // keep inputs away from the kink at zero
        check_op("relu", &[&[4, 4]], 0.1, 1.0, Arc::new(|t, v| t.relu(v[0]))),
        check_op("relu negative", &[&[4, 4]], -1.0, -0.1, Arc::new(|t, v| t.relu(v[0]))),
        check_op("silu", &[&[4, 4]], -3.0, 3.0, Arc::new(|t, v| t.silu(v[0]))),
        check_op("sigmoid", &[&[4, 4]], -3.0, 3.0, Arc::new(|t, v| t.sigmoid(v[0]))),
        check_op("exp", &[&[4, 4]], -2.0, 2.0, Arc::new(|t, v| t.exp(v[0]))),
        check_op("log", &[&[4, 4]], 0.2, 3.0, Arc::new(|t, v| t.log(v[0]))),
        check_op("softmax_lastdim", &[&[3, 5]], -3.0, 3.0, Arc::new(|t, v| t.softmax_lastdim(v[0]))),
        check_op("concat rows", &[&[2, 3], &[4, 3]], -1.0, 1.0, Arc::new(|t, v| t.concat(v, 0))),
        check_op("concat cols", &[&[3, 2], &[3, 5]], -1.0, 1.0, Arc::new(|t, v| t.concat(v, 1))),
        check_op("slice", &[&[5, 3]], -1.0, 1.0, Arc::new(|t, v| t.slice(v[0], 0, 1, 3))),
        check_op("reshape", &[&[3, 4]], -1.0, 1.0, Arc::new(|t, v| t.reshape(v[0], vec![2, 6]))),
        check_op(
            "gather_rows",
            &[&[5, 3]],
            -1.0,
            1.0,
            Arc::new(|t, v| t.gather_rows(v[0], vec![4, 0, 4, 2])),
        ),
        check_op("spmm", &[&[5, 3]], -1.0, 1.0, Arc::new(move |t, v| t.spmm(sparse.clone(), v[0]))),
    ];
    let broadcasts: [&[usize]; 6] = [&[3, 4], &[4], &[1, 4], &[3, 1], &[1], &[]];
    for b in broadcasts {
        let shapes: [&[usize]; 2] = [&[3, 4], b];
        out.push(check_op(&format!("add {b:?}"), &shapes, -2.0, 2.0, Arc::new(|t, v| t.add(v[0], v[1]))));
        out.push(check_op(&format!("sub {b:?}"), &shapes, -2.0, 2.0, Arc::new(|t, v| t.sub(v[0], v[1]))));
        out.push(check_op(&format!("mul {b:?}"), &shapes, -2.0, 2.0, Arc::new(|t, v| t.mul(v[0], v[1]))));
    }
    out
}

/// Checks a scalar loss of embedding rows `[n, d]` for each input.
fn check_rows_loss(name: &str, inputs: usize, n: usize, d: usize, loss: Op) -> Outcome {
    let shape = [n, d];
    let shapes: Vec<&[usize]> = (0..inputs).map(|_| &shape[..]).collect();
    check_op(name, &shapes, -1.0, 1.0, loss)
}

fn recommender_losses() -> Vec<Outcome> {
    let tiny = |lambda_au: f64, model: ModelKind| RecommenderConfig {
        dim: 4,
        layers: 2,
        lambda_reg: 0.01,
        lambda_au,
        model,
        ..RecommenderConfig::default()
    };
    let data = Dataset::from_pairs(4, 5, &[(0, 0), (0, 2), (1, 1), (1, 3), (2, 2), (2, 4), (3, 0), (3, 4)]).unwrap();
    let graph = NormalizedGraph::from_dataset(&data);
    let triples = [(0, 0, 1), (1, 3, 2), (2, 4, 0), (3, 0, 3), (0, 2, 4)];
    let mut out = vec![
        check_rows_loss("bpr", 3, 5, 4, Arc::new(|t, v| Ok(bpr_term(t, v[0], v[1], v[2]).unwrap()))),
        check_rows_loss("l2 penalty", 2, 3, 4, Arc::new(|t, v| Ok(l2_penalty(t, v, 0.3).unwrap()))),
        check_rows_loss("align", 2, 5, 4, Arc::new(|t, v| Ok(align_term(t, v[0], v[1]).unwrap()))),
        check_rows_loss("uniform", 1, 5, 4, Arc::new(|t, v| Ok(uniform_side(t, v[0]).unwrap()))),
    ];
    for (name, cfg) in [
        ("pretrain lightgcn bpr", tiny(0.0, ModelKind::Lightgcn)),
        ("pretrain lightgcn bpr+au", tiny(0.1, ModelKind::Lightgcn)),
        ("pretrain mf bpr+au", tiny(0.1, ModelKind::Mf)),
    ] {
        let mut worst: f64 = 0.0;
        for seed in 0..SEEDS {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut store = ParamStore::new();
            embedding_params(&mut store, random(&mut rng, &[4, 4], -1.0, 1.0), random(&mut rng, &[5, 4], -1.0, 1.0));
            let report = gradcheck::check(&mut store, DEFAULT_STEP, |t, s| {
                Ok(pretrain_loss_on_tape(t, s, &graph, &cfg, &triples).unwrap())
            })
            .unwrap();
            worst = worst.max(report.max_rel_err());
        }
        out.push(Outcome {
            name: name.into(),
            max_rel_err: worst,
        });
    }
    out
}

fn diffusion_losses() -> Vec<Outcome> {
    let mut out = vec![
        check_rows_loss("diffusion", 2, 4, 6, Arc::new(|t, v| Ok(diffusion_term(t, v[0], v[1]).unwrap()))),
        check_rows_loss("dispersive", 1, 5, 6, Arc::new(|t, v| Ok(dispersive_term(t, v[0], 0.5).unwrap()))),
    ];
    let shape = DenoiserShape {
        latent: 4,
        hidden: 6,
        down_blocks: 1,
        mid_blocks: 1,
        up_blocks: 1,
    };
    let mut worst: f64 = 0.0;
    for seed in 0..SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let den = Denoiser::new(shape, &mut rng).unwrap();
        let b = 3;
        let z_t = rows(&mut rng, b, 4);
        let eps = rows(&mut rng, b, 4);
        let zu = rows(&mut rng, b, 4);
        let zv = rows(&mut rng, b, 4);
        let ts: Vec<usize> = (0..b).map(|_| rng.random_range(1..=20)).collect();
        let mut store = den.store().clone();
        let report = gradcheck::check(&mut store, DEFAULT_STEP, |t, s| {
            let mut local = den.clone();
            local.store_mut().load_flat(&s.flatten())?;
            Ok(total_loss_on_tape(t, &local, &z_t, &ts, &eps, &zu, &zv, 0.5, 0.5).unwrap())
        })
        .unwrap();
        worst = worst.max(report.max_rel_err());
    }
    out.push(Outcome {
        name: "total generator loss through denoiser".into(),
        max_rel_err: worst,
    });
    out
}

pub fn run_all() -> Vec<Outcome> {
    let mut all = tape_ops();
    all.extend(recommender_losses());
    all.extend(diffusion_losses());
    all
}
