use diffcore::{Adam, AdamConfig, Tape, Tensor};
use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::losses::{diffusion_term, dispersive_term};
use super::{forward_noise, reverse_step, Denoiser, DenoiserShape, GeneratorMeta, NoiseSchedule};
use crate::error::{Checkpoint, DldaError, Result};
use crate::evaluation::logdet_covariance_regularized;
use crate::rng::{child_seed, normal_vec, rng_from_seed, StageRng};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiffusionConfig {
    pub steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    pub hidden: usize,
    pub down_blocks: usize,
    pub mid_blocks: usize,
    pub up_blocks: usize,
    pub lambda_disp: f64,
    pub tau: f64,
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Rows in the fixed probe batch whose bottleneck covariance is logged.
    pub probe_size: usize,
}

impl Default for DiffusionConfig {
    fn default() -> Self {
        Self {
            steps: 50,
            beta_start: 1e-4,
            beta_end: 0.02,
            hidden: 64,
            down_blocks: 1,
            mid_blocks: 1,
            up_blocks: 1,
            lambda_disp: 0.5,
            tau: 0.5,
            lr: 0.005,
            batch_size: 64,
            epochs: 100,
            probe_size: 128,
        }
    }
}

impl DiffusionConfig {
    pub fn schedule(&self) -> Result<NoiseSchedule> {
        NoiseSchedule::linear(self.beta_start, self.beta_end, self.steps)
    }

    pub fn shape(&self, latent: usize) -> DenoiserShape {
        DenoiserShape {
            latent,
            hidden: self.hidden,
            down_blocks: self.down_blocks,
            mid_blocks: self.mid_blocks,
            up_blocks: self.up_blocks,
        }
    }

    pub fn validate(&self, path: &str) -> Result<()> {
        let bad = |field: &str, message: String| DldaError::Config {
            path: format!("{path}.{field}"),
            message,
        };
        if !(self.beta_start > 0.0 && self.beta_start <= self.beta_end && self.beta_end < 1.0) {
            return Err(bad(
                "beta_start",
                format!("need 0 < beta_start <= beta_end < 1, got {} and {}", self.beta_start, self.beta_end),
            ));
        }
        if self.hidden == 0 || !self.hidden.is_multiple_of(2) {
            return Err(bad("hidden", format!("must be a positive even width, got {}", self.hidden)));
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(bad("tau", format!("must be positive, got {}", self.tau)));
        }
        if !(self.lambda_disp >= 0.0 && self.lambda_disp.is_finite()) {
            return Err(bad("lambda_disp", format!("must be >= 0, got {}", self.lambda_disp)));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(bad("lr", format!("must be positive, got {}", self.lr)));
        }
        if self.batch_size < 2 {
            return Err(bad("batch_size", format!("must be at least 2, got {}", self.batch_size)));
        }
        if self.probe_size < 2 {
            return Err(bad("probe_size", format!("must be at least 2, got {}", self.probe_size)));
        }
        Ok(())
    }
}

/// Source of `(zu, zv)` condition embeddings for training rows.
pub trait ConditionSource {
    fn draw(&self, rng: &mut StageRng) -> (Vec<f64>, Vec<f64>);
}

/// The same condition pair for every row.
#[derive(Clone, Debug)]
pub struct FixedCondition(pub Vec<f64>, pub Vec<f64>);

impl ConditionSource for FixedCondition {
    fn draw(&self, _: &mut StageRng) -> (Vec<f64>, Vec<f64>) {
        (self.0.clone(), self.1.clone())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratorEpoch {
    pub epoch: usize,
    pub diffusion: f64,
    pub dispersive: f64,
    pub total: f64,
    /// Log-determinant of the bottleneck covariance on the probe batch.
    pub logdet: f64,
}

#[derive(Clone, Debug)]
pub struct TrainedGenerator {
    pub denoiser: Denoiser,
    pub schedule: NoiseSchedule,
    pub meta: GeneratorMeta,
    pub curve: Vec<GeneratorEpoch>,
}

struct Batch {
    z_t: Vec<Vec<f64>>,
    ts: Vec<usize>,
    eps: Vec<Vec<f64>>,
    zu: Vec<Vec<f64>>,
    zv: Vec<Vec<f64>>,
}

fn draw_batch(
    rows: &[&[f64]],
    sched: &NoiseSchedule,
    conditions: &dyn ConditionSource,
    rng: &mut StageRng,
) -> Batch {
    let d = rows[0].len();
    let mut b = Batch {
        z_t: Vec::with_capacity(rows.len()),
        ts: Vec::with_capacity(rows.len()),
        eps: Vec::with_capacity(rows.len()),
        zu: Vec::with_capacity(rows.len()),
        zv: Vec::with_capacity(rows.len()),
    };
    for z0 in rows {
        let t = rng.random_range(1..=sched.steps());
        let eps = normal_vec(rng, d);
        let (zu, zv) = conditions.draw(rng);
        b.z_t.push(forward_noise(z0, t, &eps, sched));
        b.ts.push(t);
        b.eps.push(eps);
        b.zu.push(zu);
        b.zv.push(zv);
    }
    b
}

/// Returns `(total, diffusion, dispersive)` values after one Adam step.
fn train_step(
    den: &mut Denoiser,
    adam: &mut Adam,
    batch: &Batch,
    lambda_disp: f64,
    tau: f64,
) -> Result<(f64, f64, f64)> {
    let mut tape = Tape::new();
    let (z, te, u, v) = den.inputs(&mut tape, &batch.z_t, &batch.ts, &batch.zu, &batch.zv)?;
    let eps = tape.leaf(Tensor::from_rows(&batch.eps)?)?;
    let (eps_hat, m) = den.forward(&mut tape, z, te, u, v)?;
    let l_diff = diffusion_term(&mut tape, eps_hat, eps)?;
    let l_disp = dispersive_term(&mut tape, m, tau)?;
    let loss = if lambda_disp > 0.0 {
        let w = tape.scale(l_disp, lambda_disp)?;
        tape.add(l_diff, w)?
    } else {
        l_diff
    };
    let out = (
        tape.value(loss).item(),
        tape.value(l_diff).item(),
        tape.value(l_disp).item(),
    );
    den.store_mut().zero_grad();
    tape.backward(loss, den.store_mut())?;
    adam.step(den.store_mut())?;
    Ok(out)
}

/// Value of `L_diff + lambda_disp * L_disp` on an explicit batch, with the
/// denoiser's parameters live on `tape`. Exposed for gradient checks.
pub fn total_loss_on_tape(
    tape: &mut Tape,
    den: &Denoiser,
    z_t: &[Vec<f64>],
    ts: &[usize],
    eps: &[Vec<f64>],
    zu: &[Vec<f64>],
    zv: &[Vec<f64>],
    lambda_disp: f64,
    tau: f64,
) -> Result<diffcore::Var> {
    let (z, te, u, v) = den.inputs(tape, z_t, ts, zu, zv)?;
    let e = tape.leaf(Tensor::from_rows(eps)?)?;
    let (eps_hat, m) = den.forward(tape, z, te, u, v)?;
    let l_diff = diffusion_term(tape, eps_hat, e)?;
    let l_disp = dispersive_term(tape, m, tau)?;
    let w = tape.scale(l_disp, lambda_disp)?;
    Ok(tape.add(l_diff, w)?)
}

/// Mean diffusion loss of `den` on `z0` rows with `t` and `eps` drawn from
/// `seed`.
pub fn diffusion_loss(
    den: &Denoiser,
    sched: &NoiseSchedule,
    z0: &[Vec<f64>],
    conditions: &dyn ConditionSource,
    seed: u64,
) -> Result<f64> {
    if z0.is_empty() || sched.steps() == 0 {
        return Err(DldaError::invalid("diffusion loss needs rows and at least one step"));
    }
    let mut rng = rng_from_seed(seed);
    let rows: Vec<&[f64]> = z0.iter().map(Vec::as_slice).collect();
    let b = draw_batch(&rows, sched, conditions, &mut rng);
    let mut tape = Tape::new();
    let (z, te, u, v) = den.inputs(&mut tape, &b.z_t, &b.ts, &b.zu, &b.zv)?;
    let eps = tape.leaf(Tensor::from_rows(&b.eps)?)?;
    let (eps_hat, _) = den.forward(&mut tape, z, te, u, v)?;
    let l = diffusion_term(&mut tape, eps_hat, eps)?;
    Ok(tape.value(l).item())
}

/// Mini-batch Adam on `L_diff + lambda_disp * L_disp`.
///
/// Each epoch shuffles the pool and takes `ceil(pool / batch)` steps; a
/// batch always holds `batch_size` rows, cycling through the shuffled pool
/// when it is smaller. Initialization, batch draws and the probe set use
/// separate child streams of `seed`, so runs that differ only in
/// `lambda_disp` see identical data.
pub fn train_generator(
    config: &DiffusionConfig,
    pool: &[Vec<f64>],
    conditions: &dyn ConditionSource,
    seed: u64,
) -> Result<TrainedGenerator> {
    config.validate("diffusion")?;
    if pool.is_empty() {
        return Err(DldaError::invalid("generator training pool is empty"));
    }
    if config.steps == 0 {
        return Err(DldaError::invalid("generator training needs at least one diffusion step"));
    }
    let d = pool[0].len();
    if pool.iter().any(|r| r.len() != d) {
        return Err(DldaError::invalid("generator pool rows differ in width"));
    }
    let sched = config.schedule()?;
    let mut den = Denoiser::new(config.shape(d), &mut rng_from_seed(child_seed(seed, 0)))?;
    let mut rng = rng_from_seed(child_seed(seed, 1));
    let probe = {
        let mut prng = rng_from_seed(child_seed(seed, 2));
        let rows: Vec<&[f64]> = (0..config.probe_size).map(|k| pool[k % pool.len()].as_slice()).collect();
        draw_batch(&rows, &sched, conditions, &mut prng)
    };
    let mut adam = Adam::new(AdamConfig {
        lr: config.lr,
        ..AdamConfig::default()
    });
    let meta = GeneratorMeta {
        shape: den.shape(),
        steps: config.steps,
        beta_start: config.beta_start,
        beta_end: config.beta_end,
        seed,
        lambda_disp: config.lambda_disp,
        tau: config.tau,
    };

    let mut order: Vec<usize> = (0..pool.len()).collect();
    let steps_per_epoch = pool.len().div_ceil(config.batch_size);
    let mut curve = Vec::with_capacity(config.epochs);
    let mut last_good = den.store().flatten();
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let (mut sum, mut sum_diff, mut sum_disp) = (0.0, 0.0, 0.0);
        for step in 0..steps_per_epoch {
            let rows: Vec<&[f64]> = (0..config.batch_size)
                .map(|k| pool[order[(step * config.batch_size + k) % pool.len()]].as_slice())
                .collect();
            let batch = draw_batch(&rows, &sched, conditions, &mut rng);
            let (total, diff, disp) = train_step(&mut den, &mut adam, &batch, config.lambda_disp, config.tau)
                .map_err(|e| DldaError::Diverged {
                    stage: "generator",
                    epoch,
                    reason: e.to_string(),
                    last_checkpoint: Some(Checkpoint::Generator(last_good.clone())),
                })?;
            sum += total;
            sum_diff += diff;
            sum_disp += disp;
        }
        let m = den.bottlenecks(&probe.z_t, &probe.ts, &probe.zu, &probe.zv)?;
        let k = steps_per_epoch as f64;
        let rec = GeneratorEpoch {
            epoch,
            diffusion: sum_diff / k,
            dispersive: sum_disp / k,
            total: sum / k,
            logdet: logdet_covariance_regularized(&m)?,
        };
        log::debug!(
            "generator epoch {epoch}: diff {:.6} disp {:.6} logdet {:.4}",
            rec.diffusion,
            rec.dispersive,
            rec.logdet
        );
        curve.push(rec);
        last_good = den.store().flatten();
    }
    Ok(TrainedGenerator {
        denoiser: den,
        schedule: sched,
        meta,
        curve,
    })
}

/// Ancestral sampling: `z_T ~ N(0, I)`, then `T` reverse steps. With an
/// empty schedule the initial draw is returned unchanged.
pub fn sample_latent(den: &Denoiser, sched: &NoiseSchedule, zu: &[f64], zv: &[f64], seed: u64) -> Result<Vec<f64>> {
    let d = den.shape().latent;
    let mut rng = rng_from_seed(seed);
    let mut z = normal_vec(&mut rng, d);
    for t in (1..=sched.steps()).rev() {
        let (eps_hat, _) = den.predict(&z, t, zu, zv)?;
        let eta = if t > 1 { normal_vec(&mut rng, d) } else { vec![0.0; d] };
        z = reverse_step(&z, t, &eps_hat, sched, &eta);
    }
    Ok(z)
}

/// One request for [`sample_many`].
#[derive(Clone, Debug, PartialEq)]
pub struct SampleRequest {
    pub zu: Vec<f64>,
    pub zv: Vec<f64>,
    pub seed: u64,
}

/// Parallel sampling; equal to calling [`sample_latent`] per request.
pub fn sample_many(den: &Denoiser, sched: &NoiseSchedule, requests: &[SampleRequest]) -> Result<Vec<Vec<f64>>> {
    requests
        .par_iter()
        .map(|r| sample_latent(den, sched, &r.zu, &r.zv, r.seed))
        .collect()
}
