//! Attack orchestration: the diffusion attack end to end, heuristic
//! baselines, and victim retraining.

use std::time::Instant;

use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use crate::data::{
    activity_cap, fake_user_count, inject_profiles, popularity_order, sample_attacker_view, Dataset, PoisonedMatrix,
    TargetSet,
};
use crate::diffusion::{sample_many, train_generator, ConditionSource, DiffusionConfig, SampleRequest, TrainedGenerator};
use crate::error::{DldaError, Result};
use crate::projection::{project_profile, FakeProfile, FakeProfileSet, ProjectionConfig, Provenance};
use crate::recommender::{
    high_activity_users, pretrain, select_conditions, ConditionPool, EmbeddingTable, RecommenderConfig,
    TrainedRecommender,
};
use crate::rng::{child_seed, derive_seed, rng_from_seed, Stage, StageRng};
use crate::runlog::RunLog;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackMethod {
    Dlda,
    Random,
    Bandwagon,
    None,
}

impl AttackMethod {
    pub fn name(self) -> &'static str {
        match self {
            AttackMethod::Dlda => "dlda",
            AttackMethod::Random => "random",
            AttackMethod::Bandwagon => "bandwagon",
            AttackMethod::None => "none",
        }
    }
}

/// Projection settings before the data-dependent defaults are filled in.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProjectionSettings {
    /// Defaults to the mean real-user activity minus the target count
    /// (at least 1).
    pub lambda_pois: Option<f64>,
    /// Threshold on standardized scores; `null` disables it.
    pub delta: Option<f64>,
    /// Defaults to the activity cap.
    pub n_max: Option<usize>,
}

impl Default for ProjectionSettings {
    fn default() -> Self {
        Self {
            lambda_pois: None,
            delta: Some(0.0),
            n_max: None,
        }
    }
}

impl ProjectionSettings {
    pub fn resolve(&self, train: &Dataset, targets: usize) -> ProjectionConfig {
        let cap = activity_cap(train);
        let mean_activity = train.len() as f64 / train.user_count().max(1) as f64;
        ProjectionConfig {
            lambda_pois: self
                .lambda_pois
                .unwrap_or_else(|| (mean_activity - targets as f64).max(1.0)),
            delta: self.delta,
            n_max: self.n_max.unwrap_or(cap).min(cap),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AttackConfig {
    pub method: AttackMethod,
    pub injection_ratio: f64,
    /// Fraction of training interactions the attacker observes.
    pub attacker_view: f64,
    /// Fraction of view users, by activity, whose embeddings train the
    /// generator.
    pub high_activity_fraction: f64,
    /// Bandwagon filler pool: this fraction of the most popular items.
    pub popular_fraction: f64,
    pub surrogate: RecommenderConfig,
    pub diffusion: DiffusionConfig,
    pub projection: ProjectionSettings,
}

impl Default for AttackConfig {
    fn default() -> Self {
        Self {
            method: AttackMethod::Dlda,
            injection_ratio: 0.01,
            attacker_view: 0.25,
            high_activity_fraction: 0.1,
            popular_fraction: 0.1,
            surrogate: RecommenderConfig::default(),
            diffusion: DiffusionConfig::default(),
            projection: ProjectionSettings::default(),
        }
    }
}

impl AttackConfig {
    pub fn validate(&self, path: &str) -> Result<()> {
        let bad = |field: &str, message: String| DldaError::Config {
            path: format!("{path}.{field}"),
            message,
        };
        if !(0.0..=0.05).contains(&self.injection_ratio) {
            return Err(bad("injection_ratio", format!("must be in [0, 0.05], got {}", self.injection_ratio)));
        }
        let unit = |v: f64| v > 0.0 && v <= 1.0;
        if !unit(self.attacker_view) {
            return Err(bad("attacker_view", format!("must be in (0, 1], got {}", self.attacker_view)));
        }
        if !unit(self.high_activity_fraction) {
            return Err(bad(
                "high_activity_fraction",
                format!("must be in (0, 1], got {}", self.high_activity_fraction),
            ));
        }
        if !unit(self.popular_fraction) {
            return Err(bad("popular_fraction", format!("must be in (0, 1], got {}", self.popular_fraction)));
        }
        if let Some(l) = self.projection.lambda_pois {
            if !(l > 0.0 && l.is_finite()) {
                return Err(bad("projection.lambda_pois", format!("must be positive, got {l}")));
            }
        }
        if let Some(d) = self.projection.delta {
            if d.is_nan() {
                return Err(bad("projection.delta", "must be a number or null".into()));
            }
        }
        self.surrogate.validate(&format!("{path}.surrogate"))?;
        self.diffusion.validate(&format!("{path}.diffusion"))?;
        Ok(())
    }
}

/// What one attack trial runs on.
#[derive(Clone, Copy, Debug)]
pub struct AttackInput<'a> {
    /// Full training split; real users are never modified.
    pub train: &'a Dataset,
    pub targets: &'a TargetSet,
    pub master_seed: u64,
    pub trial: u64,
}

impl AttackInput<'_> {
    pub fn stage_seed(&self, stage: Stage) -> u64 {
        derive_seed(self.master_seed, stage, self.trial)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageTiming {
    pub stage: String,
    pub seconds: f64,
}

#[derive(Clone, Debug)]
pub struct AttackRun {
    pub method: AttackMethod,
    pub poisoned: PoisonedMatrix,
    pub fakes: FakeProfileSet,
    pub surrogate: Option<TrainedRecommender>,
    pub generator: Option<TrainedGenerator>,
    /// Wall-clock per stage; not part of the reproducible artifacts.
    pub timings: Vec<StageTiming>,
    pub log: RunLog,
}

struct Timer(Vec<StageTiming>);

impl Timer {
    fn run<T>(&mut self, stage: &str, f: impl FnOnce() -> Result<T>) -> Result<T> {
        let start = Instant::now();
        let out = f();
        self.0.push(StageTiming {
            stage: stage.into(),
            seconds: start.elapsed().as_secs_f64(),
        });
        out
    }
}

pub fn run_attack(config: &AttackConfig, input: AttackInput) -> Result<AttackRun> {
    config.validate("attack")?;
    match config.method {
        AttackMethod::Dlda => run_dlda(config, input),
        AttackMethod::Random => run_random(config, input),
        AttackMethod::Bandwagon => run_bandwagon(config, input, config.popular_fraction),
        AttackMethod::None => no_attack(input),
    }
}

/// The clean baseline: no fake rows.
pub fn no_attack(input: AttackInput) -> Result<AttackRun> {
    let fakes = FakeProfileSet::new(input.train.item_count(), Vec::new());
    let poisoned = inject_profiles(input.train, &fakes, activity_cap(input.train))?;
    let mut log = RunLog::new();
    log.line(format!("trial {}: method none, 0 fake users", input.trial));
    Ok(AttackRun {
        method: AttackMethod::None,
        poisoned,
        fakes,
        surrogate: None,
        generator: None,
        timings: Vec::new(),
        log,
    })
}

/// Conditions drawn per training row from the surrogate's anchors.
struct PoolConditions<'a> {
    pool: ConditionPool,
    table: &'a EmbeddingTable,
}

impl ConditionSource for PoolConditions<'_> {
    fn draw(&self, rng: &mut StageRng) -> (Vec<f64>, Vec<f64>) {
        let c = self.pool.draw(rng);
        (self.table.user(c.user).to_vec(), self.table.item(c.item).to_vec())
    }
}

/// View sampling, surrogate pretraining, condition selection, generator
/// training, sampling, projection and injection.
pub fn run_dlda(config: &AttackConfig, input: AttackInput) -> Result<AttackRun> {
    let train = input.train;
    let m_a = fake_user_count(config.injection_ratio, train.user_count());
    if m_a == 0 {
        let mut run = no_attack(input)?;
        run.method = AttackMethod::Dlda;
        return Ok(run);
    }
    let mut log = RunLog::new();
    let mut timer = Timer(Vec::new());
    let cap = activity_cap(train);
    let proj = config.projection.resolve(train, input.targets.len());
    proj.validate(input.targets.len()).map_err(|e| e.in_stage("projection"))?;

    let view = timer
        .run("attacker_view", || {
            sample_attacker_view(train, config.attacker_view, input.stage_seed(Stage::AttackerView))
        })
        .map_err(|e| e.in_stage("attacker_view"))?;
    log.line(format!("trial {}: attacker view holds {} interactions", input.trial, view.len()));

    let surrogate = timer
        .run("surrogate", || pretrain(&config.surrogate, &view, input.stage_seed(Stage::Surrogate)))
        .map_err(|e| e.in_stage("surrogate"))?;
    let table = &surrogate.table;

    let pool_users = high_activity_users(&view, config.high_activity_fraction);
    let pool: Vec<Vec<f64>> = pool_users.iter().map(|&u| table.user(u).to_vec()).collect();
    log.line(format!("trial {}: generator pool of {} high-activity users", input.trial, pool.len()));
    let source = PoolConditions {
        pool: ConditionPool::build(table, &view, input.targets),
        table,
    };
    if source.pool.is_empty() {
        return Err(DldaError::invalid("no target items to condition on").in_stage("conditions"));
    }

    let generator = timer
        .run("generator", || {
            train_generator(&config.diffusion, &pool, &source, input.stage_seed(Stage::Generator))
        })
        .map_err(|e| e.in_stage("generator"))?;

    let conditions = select_conditions(table, &view, input.targets, m_a, input.stage_seed(Stage::Conditions));
    let sampling_seed = input.stage_seed(Stage::Sampling);
    let requests: Vec<SampleRequest> = conditions
        .iter()
        .enumerate()
        .map(|(k, c)| SampleRequest {
            zu: table.user(c.user).to_vec(),
            zv: table.item(c.item).to_vec(),
            seed: child_seed(sampling_seed, k as u64),
        })
        .collect();
    let latents = timer
        .run("sampling", || sample_many(&generator.denoiser, &generator.schedule, &requests))
        .map_err(|e| e.in_stage("sampling"))?;

    let projection_seed = input.stage_seed(Stage::Projection);
    let profiles: Vec<FakeProfile> = latents
        .iter()
        .zip(&conditions)
        .zip(&requests)
        .enumerate()
        .map(|(k, ((z, c), req))| {
            let mut rng = rng_from_seed(child_seed(projection_seed, k as u64));
            let row = project_profile(z, table, &proj, input.targets, &mut rng);
            FakeProfile {
                items: row.items,
                provenance: Provenance {
                    method: "dlda".into(),
                    seed: req.seed,
                    condition_user: Some(c.user),
                    condition_item: Some(c.item),
                    condition_fallback: c.fallback,
                    drawn_n: Some(row.drawn_n),
                    active: row.active,
                },
            }
        })
        .collect();
    let fakes = FakeProfileSet::new(train.item_count(), profiles);
    let poisoned = inject_profiles(train, &fakes, cap).map_err(|e| e.in_stage("injection"))?;
    log.line(format!(
        "trial {}: injected {m_a} dlda profiles (cap {cap}, lambda_pois {:.4}, n_max {})",
        input.trial, proj.lambda_pois, proj.n_max
    ));
    Ok(AttackRun {
        method: AttackMethod::Dlda,
        poisoned,
        fakes,
        surrogate: Some(surrogate),
        generator: Some(generator),
        timings: timer.0,
        log,
    })
}

/// Targets plus `cap - |targets|` fillers: first uniformly from `pool`
/// (non-targets, ascending), then uniformly from the remaining non-targets
/// once the pool runs out.
fn filler_row(pool: &[usize], rest: &[usize], targets: &TargetSet, cap: usize, rng: &mut StageRng) -> Vec<usize> {
    let need = cap.saturating_sub(targets.len());
    let from_pool = need.min(pool.len());
    let mut items: Vec<usize> = sample(rng, pool.len(), from_pool).into_iter().map(|k| pool[k]).collect();
    let extra = (need - from_pool).min(rest.len());
    items.extend(sample(rng, rest.len(), extra).into_iter().map(|k| rest[k]));
    items.extend(&targets.items);
    items.sort_unstable();
    items
}

fn heuristic(input: AttackInput, config: &AttackConfig, method: AttackMethod, pool: Vec<usize>) -> Result<AttackRun> {
    let train = input.train;
    let mut timer = Timer(Vec::new());
    let m_a = fake_user_count(config.injection_ratio, train.user_count());
    let cap = activity_cap(train);
    if cap < input.targets.len() && m_a > 0 {
        return Err(DldaError::invalid(format!(
            "activity cap {cap} cannot hold {} targets",
            input.targets.len()
        )));
    }
    let in_pool: std::collections::HashSet<usize> = pool.iter().copied().collect();
    let rest: Vec<usize> = (0..train.item_count())
        .filter(|i| !input.targets.contains(*i) && !in_pool.contains(i))
        .collect();
    let seed = input.stage_seed(Stage::Filler);
    let fakes = timer.run("filler", || {
        let profiles = (0..m_a)
            .map(|k| {
                let row_seed = child_seed(seed, k as u64);
                let items = filler_row(&pool, &rest, input.targets, cap, &mut rng_from_seed(row_seed));
                let mut provenance = Provenance::heuristic(row_seed);
                provenance.method = method.name().into();
                FakeProfile { items, provenance }
            })
            .collect();
        Ok(FakeProfileSet::new(train.item_count(), profiles))
    })?;
    let poisoned = inject_profiles(train, &fakes, cap).map_err(|e| e.in_stage("injection"))?;
    let mut log = RunLog::new();
    log.line(format!(
        "trial {}: injected {m_a} {} profiles (cap {cap}, filler pool {})",
        input.trial,
        method.name(),
        pool.len()
    ));
    Ok(AttackRun {
        method,
        poisoned,
        fakes,
        surrogate: None,
        generator: None,
        timings: timer.0,
        log,
    })
}

/// Targets plus uniformly random non-target fillers up to the cap.
pub fn run_random(config: &AttackConfig, input: AttackInput) -> Result<AttackRun> {
    let pool: Vec<usize> = (0..input.train.item_count()).filter(|i| !input.targets.contains(*i)).collect();
    heuristic(input, config, AttackMethod::Random, pool)
}

/// Targets plus fillers from the `popular_fraction` most popular items.
/// With `popular_fraction = 1` the rows equal [`run_random`]'s.
pub fn run_bandwagon(config: &AttackConfig, input: AttackInput, popular_fraction: f64) -> Result<AttackRun> {
    if !(popular_fraction > 0.0 && popular_fraction <= 1.0) {
        return Err(DldaError::invalid(format!(
            "popular_fraction must be in (0, 1], got {popular_fraction}"
        )));
    }
    let n = input.train.item_count();
    let top = (popular_fraction * n as f64).floor() as usize;
    let order = popularity_order(input.train);
    let mut pool: Vec<usize> = order[n - top..]
        .iter()
        .copied()
        .filter(|&i| !input.targets.contains(i))
        .collect();
    pool.sort_unstable();
    heuristic(input, config, AttackMethod::Bandwagon, pool)
}

/// Trains the victim on the poisoned matrix; the returned table covers
/// real and fake users.
pub fn retrain_victim(poisoned: &PoisonedMatrix, config: &RecommenderConfig, seed: u64) -> Result<TrainedRecommender> {
    let data = poisoned.to_dataset()?;
    pretrain(config, &data, seed).map_err(|e| e.in_stage("victim"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{select_targets, Popularity, SyntheticSpec};

    fn world() -> (Dataset, TargetSet) {
        let spec = SyntheticSpec {
            users: 120,
            items: 60,
            interactions_per_user: 10,
            ..SyntheticSpec::default()
        };
        let d = spec.generate().unwrap();
        let t = select_targets(&d, 3, Popularity::Unpopular, 1).unwrap();
        (d, t)
    }

    fn small_config(method: AttackMethod) -> AttackConfig {
        AttackConfig {
            method,
            injection_ratio: 0.05,
            surrogate: RecommenderConfig {
                dim: 8,
                epochs: 2,
                ..RecommenderConfig::default()
            },
            diffusion: DiffusionConfig {
                steps: 5,
                hidden: 8,
                epochs: 2,
                batch_size: 8,
                probe_size: 16,
                ..DiffusionConfig::default()
            },
            ..AttackConfig::default()
        }
    }

    fn input<'a>(d: &'a Dataset, t: &'a TargetSet) -> AttackInput<'a> {
        AttackInput {
            train: d,
            targets: t,
            master_seed: 9,
            trial: 0,
        }
    }

    #[test]
    fn random_rows_hold_targets_at_cap() {
        let (d, t) = world();
        let run = run_random(&small_config(AttackMethod::Random), input(&d, &t)).unwrap();
        assert_eq!(run.fakes.len(), 6);
        for p in run.fakes.profiles() {
            assert_eq!(p.items.len(), activity_cap(&d));
            assert!(t.items.iter().all(|i| p.items.contains(i)));
        }
    }

    #[test]
    fn full_bandwagon_matches_random() {
        let (d, t) = world();
        let cfg = small_config(AttackMethod::Bandwagon);
        let a = run_random(&cfg, input(&d, &t)).unwrap();
        let b = run_bandwagon(&cfg, input(&d, &t), 1.0).unwrap();
        let rows = |r: &AttackRun| r.fakes.profiles().iter().map(|p| p.items.clone()).collect::<Vec<_>>();
        assert_eq!(rows(&a), rows(&b));
    }

    #[test]
    fn bandwagon_fillers_come_from_popular_pool() {
        let (d, t) = world();
        let run = run_bandwagon(&small_config(AttackMethod::Bandwagon), input(&d, &t), 0.5).unwrap();
        let order = popularity_order(&d);
        let popular: Vec<usize> = order[30..].to_vec();
        for p in run.fakes.profiles() {
            assert!(p.items.iter().all(|i| t.contains(*i) || popular.contains(i)));
        }
    }

    #[test]
    fn zero_ratio_leaves_train_untouched() {
        let (d, t) = world();
        let cfg = AttackConfig {
            injection_ratio: 0.0,
            ..small_config(AttackMethod::Dlda)
        };
        let run = run_dlda(&cfg, input(&d, &t)).unwrap();
        assert!(run.fakes.is_empty());
        assert_eq!(run.poisoned.to_dataset().unwrap(), d);
    }

    #[test]
    fn dlda_rows_respect_budget_and_targets() {
        let (d, t) = world();
        let cfg = small_config(AttackMethod::Dlda);
        let run = run_dlda(&cfg, input(&d, &t)).unwrap();
        assert_eq!(run.fakes.len(), 6);
        let cap = activity_cap(&d);
        for p in run.fakes.profiles() {
            assert!(p.items.len() <= cap);
            assert!(t.items.iter().all(|i| p.items.contains(i)));
        }
        let again = run_dlda(&cfg, input(&d, &t)).unwrap();
        assert_eq!(again.fakes.to_tsv(), run.fakes.to_tsv());
    }

    #[test]
    fn out_of_range_ratio_names_field() {
        let cfg = AttackConfig {
            injection_ratio: 0.2,
            ..AttackConfig::default()
        };
        let err = cfg.validate("attack").unwrap_err().to_string();
        assert!(err.contains("attack.injection_ratio"), "{err}");
    }
}
