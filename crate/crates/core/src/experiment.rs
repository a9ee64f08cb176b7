//! Experiment configuration and the on-disk run pipeline behind the CLI.
//!
//! A run directory holds:
//!
//! ```text
//! config.json          resolved configuration
//! manifest.json        hashes, seeds, artifact list, wall-clock timings
//! run.log              deterministic log lines
//! split/{train,validation,test}.tsv   index pairs
//! targets.json
//! trial_<t>/fakes.tsv, provenance.json, surrogate.emb, generator.gen,
//!           victim.emb, clean_victim.emb, *_curve.csv
//! effectiveness.json, stealth.json, pca_trial_<t>.csv   (after evaluate)
//! ```

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attack::{retrain_victim, run_attack, AttackConfig, AttackInput, AttackMethod, AttackRun, StageTiming};
use crate::data::{select_targets, split_dataset, Dataset, LoadOptions, Popularity, Split, SyntheticSpec, TargetSet};
use crate::error::{DldaError, Result};
use crate::evaluation::{
    evaluate_ranking, json, pca_export_csv, read_report, stealth_metrics, EffectivenessReport, EvalSplit,
    MetricBlock, RankingResult, StealthConfig, StealthMetrics, StealthReport, ABSENT_DETECTORS, SCHEMA_VERSION,
};
use crate::recommender::{pretrain, EmbeddingTable, EpochLoss, RecommenderConfig, TableMeta};
use crate::rng::{derive_seed, Stage};
use crate::runlog::RunLog;

pub const OUT_ENV: &str = "DLDA_OUT";
pub const THREADS_ENV: &str = "DLDA_THREADS";

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    /// Tab-separated interaction file.
    pub path: Option<PathBuf>,
    /// Keep only rows rated at least this much.
    pub min_rating: Option<f64>,
    /// Generate a synthetic dataset instead of reading `path`.
    pub synthetic: Option<SyntheticSpec>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TargetConfig {
    pub count: usize,
    pub class: Popularity,
}

impl Default for TargetConfig {
    fn default() -> Self {
        Self {
            count: 5,
            class: Popularity::Unpopular,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvaluationConfig {
    pub ks: Vec<usize>,
    pub stealth: StealthConfig,
    /// Write a 3-D PCA export per trial.
    pub pca: bool,
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        Self {
            ks: vec![10, 50],
            stealth: StealthConfig::default(),
            pca: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    /// Master seed; every stage seed derives from it.
    pub seed: u64,
    pub trials: usize,
    pub data: DataConfig,
    pub targets: TargetConfig,
    pub attack: AttackConfig,
    pub victim: RecommenderConfig,
    pub evaluation: EvaluationConfig,
    pub out_dir: PathBuf,
    pub threads: Option<usize>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            seed: 2024,
            trials: 5,
            data: DataConfig::default(),
            targets: TargetConfig::default(),
            attack: AttackConfig::default(),
            victim: RecommenderConfig {
                lambda_au: 0.0,
                ..RecommenderConfig::default()
            },
            evaluation: EvaluationConfig::default(),
            out_dir: PathBuf::from("runs/default"),
            threads: None,
        }
    }
}

fn config_err(path: &str, message: impl Into<String>) -> DldaError {
    DldaError::Config {
        path: path.into(),
        message: message.into(),
    }
}

impl ExperimentConfig {
    /// Parses JSON; type errors name the offending field.
    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: Self = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            config_err(if path == "." { "<root>" } else { &path }, e.into_inner().to_string())
        })?;
        if cfg.schema_version != SCHEMA_VERSION {
            return Err(config_err(
                "schema_version",
                format!("expected {SCHEMA_VERSION}, got {}", cfg.schema_version),
            ));
        }
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| DldaError::io(path, e))?;
        Self::from_json(&text)
    }

    /// Applies `DLDA_OUT` and `DLDA_THREADS`.
    pub fn apply_env(&mut self) -> Result<()> {
        if let Ok(out) = std::env::var(OUT_ENV) {
            self.out_dir = PathBuf::from(out);
        }
        if let Ok(t) = std::env::var(THREADS_ENV) {
            let n = t
                .parse::<usize>()
                .map_err(|_| config_err("threads", format!("{THREADS_ENV}={t} is not a thread count")))?;
            self.threads = Some(n);
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(config_err(
                "schema_version",
                format!("expected {SCHEMA_VERSION}, got {}", self.schema_version),
            ));
        }
        if self.trials == 0 {
            return Err(config_err("trials", "must be at least 1"));
        }
        match (&self.data.path, &self.data.synthetic) {
            (Some(_), Some(_)) => return Err(config_err("data", "set either path or synthetic, not both")),
            (None, None) => return Err(config_err("data", "set one of path or synthetic")),
            (None, Some(s)) => s.validate().map_err(|e| config_err("data.synthetic", e.to_string()))?,
            (Some(_), None) => {}
        }
        if let Some(r) = self.data.min_rating {
            if !r.is_finite() {
                return Err(config_err("data.min_rating", "must be finite"));
            }
        }
        if self.targets.count == 0 {
            return Err(config_err("targets.count", "must be at least 1"));
        }
        let ev = &self.evaluation;
        if ev.ks.is_empty() || ev.ks.contains(&0) {
            return Err(config_err("evaluation.ks", "needs at least one positive cutoff"));
        }
        let st = &ev.stealth;
        if st.knn_k == 0 {
            return Err(config_err("evaluation.stealth.knn_k", "must be positive"));
        }
        if st.rvc_k == 0 {
            return Err(config_err("evaluation.stealth.rvc_k", "must be positive"));
        }
        if st.if_trees < 50 {
            return Err(config_err("evaluation.stealth.if_trees", format!("must be at least 50, got {}", st.if_trees)));
        }
        if st.if_subsample < 2 {
            return Err(config_err("evaluation.stealth.if_subsample", "must be at least 2"));
        }
        if self.threads == Some(0) {
            return Err(config_err("threads", "must be positive"));
        }
        self.attack.validate("attack")?;
        self.victim.validate("victim")?;
        Ok(())
    }
}

/// Sizes rayon's global pool once; later calls are ignored.
pub fn init_threads(threads: Option<usize>) {
    if let Some(n) = threads {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
}

pub fn load_dataset(cfg: &DataConfig) -> Result<Dataset> {
    match (&cfg.path, &cfg.synthetic) {
        (Some(path), _) => Dataset::load(path, LoadOptions {
            min_rating: cfg.min_rating,
        }),
        (None, Some(spec)) => spec.generate(),
        (None, None) => Err(config_err("data", "set one of path or synthetic")),
    }
}

/// Data shared by every trial of an experiment.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub data: Dataset,
    pub split: Split,
    pub targets: TargetSet,
    pub log: RunLog,
}

pub fn prepare(cfg: &ExperimentConfig) -> Result<Prepared> {
    let data = load_dataset(&cfg.data).map_err(|e| e.in_stage("data"))?;
    if data.is_empty() {
        return Err(DldaError::EmptyDataset.in_stage("data"));
    }
    let mut log = RunLog::new();
    log.line(data.stats().table_line("dataset"));
    let split = split_dataset(&data, derive_seed(cfg.seed, Stage::Split, 0), &mut log).map_err(|e| e.in_stage("split"))?;
    log.line(format!(
        "split sizes: train {} validation {} test {}; {} reassigned",
        split.train.len(),
        split.validation.len(),
        split.test.len(),
        split.reassigned.len()
    ));
    let targets = select_targets(
        &split.train,
        cfg.targets.count,
        cfg.targets.class,
        derive_seed(cfg.seed, Stage::Targets, 0),
    )
    .map_err(|e| e.in_stage("targets"))?;
    log.line(format!("targets: {:?}", targets.items));
    Ok(Prepared {
        data,
        split,
        targets,
        log,
    })
}

/// One trial: the attack, the poisoned victim, and the clean victim trained
/// with the same seed (shared with the poisoned one for the `none` method).
#[derive(Debug)]
pub struct TrialOutcome {
    pub trial: usize,
    pub attack: AttackRun,
    pub victim: EmbeddingTable,
    pub victim_curve: Vec<EpochLoss>,
    pub clean: Option<(EmbeddingTable, Vec<EpochLoss>)>,
    pub timings: Vec<StageTiming>,
}

impl TrialOutcome {
    pub fn clean_victim(&self) -> &EmbeddingTable {
        self.clean.as_ref().map_or(&self.victim, |c| &c.0)
    }
}

pub fn run_trial(cfg: &ExperimentConfig, prep: &Prepared, trial: usize) -> Result<TrialOutcome> {
    let input = AttackInput {
        train: &prep.split.train,
        targets: &prep.targets,
        master_seed: cfg.seed,
        trial: trial as u64,
    };
    let attack = run_attack(&cfg.attack, input)?;
    let mut timings = attack.timings.clone();
    let victim_seed = derive_seed(cfg.seed, Stage::Victim, trial as u64);
    let start = Instant::now();
    let victim = retrain_victim(&attack.poisoned, &cfg.victim, victim_seed)?;
    timings.push(StageTiming {
        stage: "victim".into(),
        seconds: start.elapsed().as_secs_f64(),
    });
    let clean = if attack.fakes.is_empty() {
        None
    } else {
        let start = Instant::now();
        let c = pretrain(&cfg.victim, &prep.split.train, victim_seed).map_err(|e| e.in_stage("clean_victim"))?;
        timings.push(StageTiming {
            stage: "clean_victim".into(),
            seconds: start.elapsed().as_secs_f64(),
        });
        Some((c.table, c.curve))
    };
    Ok(TrialOutcome {
        trial,
        attack,
        victim: victim.table,
        victim_curve: victim.curve,
        clean,
        timings,
    })
}

/// Runs every trial in parallel; results come back in trial order.
pub fn run_trials(cfg: &ExperimentConfig, prep: &Prepared) -> Result<Vec<TrialOutcome>> {
    (0..cfg.trials).into_par_iter().map(|t| run_trial(cfg, prep, t)).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialManifest {
    pub trial: usize,
    pub seeds: BTreeMap<String, u64>,
    pub fake_users: usize,
    /// Final-epoch log-det of the generator's bottleneck covariance.
    pub generator_logdet: Option<f64>,
    pub artifacts: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialTiming {
    pub trial: usize,
    pub stages: Vec<StageTiming>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub schema_version: u32,
    pub tool_version: String,
    pub method: AttackMethod,
    pub seed: u64,
    pub dataset_hash: String,
    pub split_hash: String,
    pub users: usize,
    pub items: usize,
    pub targets: Vec<usize>,
    pub trials: Vec<TrialManifest>,
    /// Excluded from reproducibility comparisons.
    pub wall_clock: Vec<TrialTiming>,
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| DldaError::io(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| DldaError::io(path, e))
}

fn recommender_curve_csv(curve: &[EpochLoss]) -> String {
    let mut s = String::from("epoch,loss,bpr\n");
    for e in curve {
        let _ = writeln!(s, "{},{:.16e},{:.16e}", e.epoch, e.loss, e.bpr);
    }
    s
}

fn table_meta(cfg: &RecommenderConfig, seed: u64) -> TableMeta {
    TableMeta { model: cfg.model, seed }
}

/// `cmd_attack`: prepares data, runs every trial and writes the run
/// directory.
pub fn run_attack_dir(cfg: &ExperimentConfig) -> Result<RunManifest> {
    cfg.validate()?;
    let dir = cfg.out_dir.clone();
    create_dir(&dir.join("split"))?;
    let prep = prepare(cfg)?;
    json::write(&dir.join("config.json"), cfg)?;
    Dataset::write_index_tsv(prep.split.train.interactions(), &dir.join("split/train.tsv"))?;
    Dataset::write_index_tsv(prep.split.validation.interactions(), &dir.join("split/validation.tsv"))?;
    Dataset::write_index_tsv(prep.split.test.interactions(), &dir.join("split/test.tsv"))?;
    json::write(&dir.join("targets.json"), &prep.targets)?;

    let outcomes = run_trials(cfg, &prep)?;
    let mut log = prep.log.clone();
    let mut trials = Vec::with_capacity(outcomes.len());
    let mut wall_clock = Vec::with_capacity(outcomes.len());
    for o in &outcomes {
        let t = o.trial as u64;
        let tdir = dir.join(format!("trial_{}", o.trial));
        create_dir(&tdir)?;
        let mut artifacts = Vec::new();
        let mut add = |name: &str| artifacts.push(format!("trial_{}/{name}", o.trial));

        o.attack.fakes.write(&tdir.join("fakes.tsv"), &tdir.join("provenance.json"))?;
        add("fakes.tsv");
        add("provenance.json");
        if let Some(s) = &o.attack.surrogate {
            let seed = derive_seed(cfg.seed, Stage::Surrogate, t);
            s.table.save(&tdir.join("surrogate.emb"), table_meta(&cfg.attack.surrogate, seed))?;
            write_text(&tdir.join("surrogate_curve.csv"), &recommender_curve_csv(&s.curve))?;
            add("surrogate.emb");
            add("surrogate_curve.csv");
        }
        if let Some(g) = &o.attack.generator {
            g.denoiser.save(&tdir.join("generator.gen"), &g.meta)?;
            let mut s = String::from("epoch,diffusion,dispersive,total,logdet\n");
            for e in &g.curve {
                let _ = writeln!(
                    s,
                    "{},{:.16e},{:.16e},{:.16e},{:.16e}",
                    e.epoch, e.diffusion, e.dispersive, e.total, e.logdet
                );
            }
            write_text(&tdir.join("generator_curve.csv"), &s)?;
            add("generator.gen");
            add("generator_curve.csv");
        }
        let victim_seed = derive_seed(cfg.seed, Stage::Victim, t);
        o.victim.save(&tdir.join("victim.emb"), table_meta(&cfg.victim, victim_seed))?;
        write_text(&tdir.join("victim_curve.csv"), &recommender_curve_csv(&o.victim_curve))?;
        add("victim.emb");
        add("victim_curve.csv");
        if let Some((table, curve)) = &o.clean {
            table.save(&tdir.join("clean_victim.emb"), table_meta(&cfg.victim, victim_seed))?;
            write_text(&tdir.join("clean_victim_curve.csv"), &recommender_curve_csv(curve))?;
            add("clean_victim.emb");
            add("clean_victim_curve.csv");
        }

        let seeds = Stage::ALL
            .iter()
            .map(|&s| (s.name().to_string(), derive_seed(cfg.seed, s, if s == Stage::Split || s == Stage::Targets { 0 } else { t })))
            .collect();
        trials.push(TrialManifest {
            trial: o.trial,
            seeds,
            fake_users: o.attack.fakes.len(),
            generator_logdet: o.attack.generator.as_ref().and_then(|g| g.curve.last()).map(|e| e.logdet),
            artifacts,
        });
        wall_clock.push(TrialTiming {
            trial: o.trial,
            stages: o.timings.clone(),
        });
        log.extend(o.attack.log.clone());
    }
    log.write_to(&dir.join("run.log"))?;
    let manifest = RunManifest {
        schema_version: SCHEMA_VERSION,
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        method: cfg.attack.method,
        seed: cfg.seed,
        dataset_hash: prep.data.fingerprint(),
        split_hash: EvalSplit::new(&prep.split.train, &prep.split.test).hash,
        users: prep.split.train.user_count(),
        items: prep.split.train.item_count(),
        targets: prep.targets.items.clone(),
        trials,
        wall_clock,
    };
    json::write(&dir.join("manifest.json"), &manifest)?;
    Ok(manifest)
}

fn load_table(path: &Path) -> Result<EmbeddingTable> {
    Ok(EmbeddingTable::load(path)?.0)
}

fn read_split(dir: &Path, name: &str, m: usize, n: usize) -> Result<Dataset> {
    let path = dir.join("split").join(format!("{name}.tsv"));
    if !path.exists() {
        return Err(DldaError::MissingArtifact(path));
    }
    Dataset::from_pairs(m, n, &Dataset::read_index_tsv(&path)?)
}

/// `cmd_evaluate`: ranking and stealth reports for a finished run.
pub fn evaluate_run_dir(dir: &Path, ks: Option<&[usize]>) -> Result<(EffectivenessReport, StealthReport)> {
    let manifest: RunManifest = read_report(&dir.join("manifest.json"))?;
    let cfg_path = dir.join("config.json");
    if !cfg_path.exists() {
        return Err(DldaError::MissingArtifact(cfg_path));
    }
    let cfg = ExperimentConfig::from_file(&cfg_path)?;
    let ks: Vec<usize> = ks.map_or_else(|| cfg.evaluation.ks.clone(), <[usize]>::to_vec);
    if ks.is_empty() || ks.contains(&0) {
        return Err(config_err("evaluation.ks", "needs at least one positive cutoff"));
    }
    let (m, n) = (manifest.users, manifest.items);
    let train = read_split(dir, "train", m, n)?;
    let test = read_split(dir, "test", m, n)?;
    let split = EvalSplit::new(&train, &test);
    if split.hash != manifest.split_hash {
        return Err(DldaError::invalid("split files do not match the manifest"));
    }

    let mut pairs = Vec::with_capacity(manifest.trials.len());
    let mut stealth: Vec<StealthMetrics> = Vec::with_capacity(manifest.trials.len());
    for tm in &manifest.trials {
        let tdir = dir.join(format!("trial_{}", tm.trial));
        let victim = load_table(&tdir.join("victim.emb"))?;
        let clean = if tm.fake_users == 0 {
            victim.clone()
        } else {
            load_table(&tdir.join("clean_victim.emb"))?
        };
        if victim.user_count() != m + tm.fake_users || clean.user_count() != m {
            return Err(DldaError::Format(format!("trial {} victim tables have unexpected sizes", tm.trial)));
        }
        let result = |t: &EmbeddingTable| RankingResult {
            split_hash: split.hash.clone(),
            blocks: evaluate_ranking(t, &split, &manifest.targets, &ks),
        };
        pairs.push((result(&clean), result(&victim)));

        let rows = victim.user_rows();
        let (real, fake) = rows.split_at(m);
        let seed = derive_seed(manifest.seed, Stage::Stealth, tm.trial as u64);
        stealth.push(stealth_metrics(real, fake, &cfg.evaluation.stealth, seed)?);
        if cfg.evaluation.pca {
            let mut groups: Vec<(&str, &[Vec<f64>])> = vec![("real", real)];
            if !fake.is_empty() {
                groups.push(("fake", fake));
            }
            write_text(&dir.join(format!("pca_trial_{}.csv", tm.trial)), &pca_export_csv(&groups)?)?;
        }
    }
    let method = manifest.method.name();
    let eff = EffectivenessReport::from_trials(method, &ks, &pairs)?;
    let st = StealthReport::new(method, cfg.evaluation.stealth, stealth);
    json::write(&dir.join("effectiveness.json"), &eff)?;
    json::write(&dir.join("stealth.json"), &st)?;
    Ok((eff, st))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub lambda_disp: f64,
    pub k: usize,
    pub target_hit: Option<f64>,
    pub global_delta_hit: Option<f64>,
    pub logdet: Option<f64>,
    pub error: Option<String>,
}

/// One DLDA run per `lambda_disp` value under `<out_dir>/lambda_<v>`, all
/// other settings and seeds shared. A failed value is recorded and the
/// sweep continues.
pub fn sweep(cfg: &ExperimentConfig, values: &[f64], ks: Option<&[usize]>) -> Result<Vec<SweepRow>> {
    if values.is_empty() {
        return Err(config_err("values", "sweep needs at least one value"));
    }
    cfg.validate()?;
    let k = ks.and_then(|k| k.first().copied()).unwrap_or(cfg.evaluation.ks[0]);
    let mut rows = Vec::with_capacity(values.len());
    for &v in values {
        let mut c = cfg.clone();
        c.attack.method = AttackMethod::Dlda;
        c.attack.diffusion.lambda_disp = v;
        c.out_dir = cfg.out_dir.join(format!("lambda_{v}"));
        let outcome = c.validate().and_then(|_| run_attack_dir(&c)).and_then(|man| {
            let (eff, _) = evaluate_run_dir(&c.out_dir, Some(&[k]))?;
            let logs: Vec<f64> = man.trials.iter().filter_map(|t| t.generator_logdet).collect();
            let logdet = (!logs.is_empty()).then(|| logs.iter().sum::<f64>() / logs.len() as f64);
            Ok((eff, logdet))
        });
        rows.push(match outcome {
            Ok((eff, logdet)) => SweepRow {
                lambda_disp: v,
                k,
                target_hit: Some(eff.mean_poisoned[0].target_hit),
                global_delta_hit: Some(eff.mean_delta[0].global_hit),
                logdet,
                error: None,
            },
            Err(e) => {
                log::warn!("sweep value {v} failed: {e}");
                SweepRow {
                    lambda_disp: v,
                    k,
                    target_hit: None,
                    global_delta_hit: None,
                    logdet: None,
                    error: Some(e.to_string()),
                }
            }
        });
    }
    create_dir(&cfg.out_dir)?;
    write_text(&cfg.out_dir.join("sweep.csv"), &sweep_csv(&rows))?;
    Ok(rows)
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let opt = |v: Option<f64>| v.map_or(String::new(), |x| format!("{x:.16e}"));
    let mut s = String::from("lambda_disp,k,target_hit,global_delta_hit,logdet_covariance,error\n");
    for r in rows {
        let err = r.error.as_deref().unwrap_or("").replace([',', '\n'], " ");
        let _ = writeln!(
            s,
            "{},{},{},{},{},{}",
            r.lambda_disp,
            r.k,
            opt(r.target_hit),
            opt(r.global_delta_hit),
            opt(r.logdet),
            err
        );
    }
    s
}

/// Comparison table across evaluated runs, one column per run.
#[derive(Clone, Debug, PartialEq)]
pub struct Comparison {
    pub columns: Vec<String>,
    pub rows: Vec<(String, Vec<String>)>,
}

const ABSENT: &str = "absent";

fn mean_of(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let v: Vec<f64> = values.collect::<Option<Vec<f64>>>()?;
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

fn cell(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_string(), |x| format!("{x:.4}"))
}

/// `cmd_report`. Every run needs an effectiveness report; a missing
/// stealth report marks that column's stealth rows absent.
pub fn compare_runs(dirs: &[PathBuf]) -> Result<Comparison> {
    if dirs.is_empty() {
        return Err(DldaError::invalid("report needs at least one run directory"));
    }
    let mut effs = Vec::with_capacity(dirs.len());
    let mut stealths = Vec::with_capacity(dirs.len());
    for d in dirs {
        let eff: EffectivenessReport = read_report(&d.join("effectiveness.json"))?;
        let path = d.join("stealth.json");
        let st: Option<StealthReport> = if path.exists() { Some(read_report(&path)?) } else { None };
        effs.push(eff);
        stealths.push(st);
    }
    let columns: Vec<String> = effs
        .iter()
        .zip(dirs)
        .map(|(e, d)| {
            let name = d.file_name().map_or_else(|| d.display().to_string(), |n| n.to_string_lossy().into_owned());
            format!("{} ({name})", e.method)
        })
        .collect();

    let mut rows: Vec<(String, Vec<String>)> = Vec::new();
    let ks = effs[0].ks.clone();
    type Field = fn(&MetricBlock) -> f64;
    let fields: [(&str, Field); 4] = [
        ("target H", |b| b.target_hit),
        ("target N", |b| b.target_ndcg),
        ("global H", |b| b.global_hit),
        ("global N", |b| b.global_ndcg),
    ];
    for (j, &k) in ks.iter().enumerate() {
        let at = |blocks: &[MetricBlock]| blocks.get(j).filter(|b| b.k == k).copied();
        for (label, f) in fields {
            rows.push((
                format!("{label}@{k}"),
                effs.iter().map(|e| cell(at(&e.mean_poisoned).map(|b| f(&b)))).collect(),
            ));
        }
        for (label, f) in fields {
            rows.push((
                format!("delta {label}@{k}"),
                effs.iter().map(|e| cell(at(&e.mean_delta).map(|b| f(&b)))).collect(),
            ));
        }
    }
    let stealth_row = |label: &str, f: &dyn Fn(&StealthMetrics) -> Option<f64>| -> (String, Vec<String>) {
        (
            label.to_string(),
            stealths
                .iter()
                .map(|s| match s {
                    None => ABSENT.to_string(),
                    Some(r) => cell(mean_of(r.per_trial.iter().map(f))),
                })
                .collect(),
        )
    };
    rows.push(stealth_row("fake Mahalanobis", &|m| m.fake.as_ref().map(|g| g.mahalanobis.mean)));
    rows.push(stealth_row("real Mahalanobis", &|m| Some(m.real.mahalanobis.mean)));
    rows.push(stealth_row("fake KDE score", &|m| m.fake.as_ref().map(|g| g.kde_score.mean)));
    rows.push(stealth_row("fake IF score", &|m| m.fake.as_ref().map(|g| g.iforest_score.mean)));
    rows.push(stealth_row("real IF score", &|m| Some(m.real.iforest_score.mean)));
    rows.push(stealth_row("fake kNN degree", &|m| m.fake.as_ref().map(|g| g.knn_degree.mean)));
    rows.push(stealth_row("RVC entropy", &|m| m.rvc_entropy.map(|r| r.value)));
    rows.push(stealth_row("fake log-det cov", &|m| m.fake.as_ref().and_then(|g| g.logdet_covariance)));
    rows.push(stealth_row("real-fake centroid dist", &|m| {
        m.centroid_distance.first().and_then(|r| r.get(1)).copied()
    }));
    for name in ABSENT_DETECTORS {
        rows.push((name.to_string(), vec![ABSENT.to_string(); dirs.len()]));
    }
    Ok(Comparison { columns, rows })
}

impl Comparison {
    pub fn to_markdown(&self) -> String {
        let mut widths: Vec<usize> = std::iter::once("metric".len())
            .chain(self.columns.iter().map(String::len))
            .collect();
        for (label, vals) in &self.rows {
            widths[0] = widths[0].max(label.len());
            for (w, v) in widths[1..].iter_mut().zip(vals) {
                *w = (*w).max(v.len());
            }
        }
        let line = |cells: Vec<&str>| -> String {
            let padded: Vec<String> = cells.iter().zip(&widths).map(|(c, w)| format!("{c:<w$}")).collect();
            format!("| {} |\n", padded.join(" | "))
        };
        let mut out = line(std::iter::once("metric").chain(self.columns.iter().map(String::as_str)).collect());
        out.push_str(&format!(
            "|{}|\n",
            widths.iter().map(|w| "-".repeat(w + 2)).collect::<Vec<_>>().join("|")
        ));
        for (label, vals) in &self.rows {
            out.push_str(&line(std::iter::once(label.as_str()).chain(vals.iter().map(String::as_str)).collect()));
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let esc = |s: &str| if s.contains(',') { format!("\"{s}\"") } else { s.to_string() };
        let mut out = std::iter::once("metric".to_string())
            .chain(self.columns.iter().map(|c| esc(c)))
            .collect::<Vec<_>>()
            .join(",");
        out.push('\n');
        for (label, vals) in &self.rows {
            out.push_str(&std::iter::once(esc(label)).chain(vals.iter().map(|v| esc(v))).collect::<Vec<_>>().join(","));
            out.push('\n');
        }
        out
    }
}
