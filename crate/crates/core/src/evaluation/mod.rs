//! Effectiveness and stealth metrics, and the report files built from them.

mod iforest;
pub mod json;
mod ranking;
mod stealth;

use serde::{Deserialize, Serialize};

pub use iforest::{average_path_length, isolation_forest_score, IsolationForest};
pub use ranking::{
    evaluate_ranking, global_delta, hit_at_k, ndcg_at_k, ndcg_of_list, EvalSplit, MetricBlock, RankingResult,
};
pub use stealth::{
    centroid, centroid_distances, default_epsilon, kde_likelihood, knn_graph_degree, knn_graph_degrees,
    logdet_covariance, logdet_covariance_regularized, mahalanobis, moments, pca_export_csv, rvc_entropy,
    scott_bandwidth, stealth_metrics, GroupStealth, Kde, Mahalanobis, MeanVar, Pca, RvcEntropy, StealthConfig,
    StealthMetrics, REG_FLOOR, REG_REL,
};

use crate::error::{DldaError, Result};

pub const SCHEMA_VERSION: u32 = 1;

/// Detectors whose columns are reserved but not computed.
pub const ABSENT_DETECTORS: [&str; 2] = ["oc_svm", "gad"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialEffectiveness {
    pub trial: usize,
    pub clean: Vec<MetricBlock>,
    pub poisoned: Vec<MetricBlock>,
    pub delta: Vec<MetricBlock>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EffectivenessReport {
    pub schema_version: u32,
    pub method: String,
    pub split_hash: String,
    pub ks: Vec<usize>,
    pub trials: usize,
    pub per_trial: Vec<TrialEffectiveness>,
    pub mean_clean: Vec<MetricBlock>,
    pub mean_poisoned: Vec<MetricBlock>,
    pub mean_delta: Vec<MetricBlock>,
}

fn mean_blocks(rows: &[&[MetricBlock]], ks: &[usize]) -> Vec<MetricBlock> {
    (0..ks.len())
        .filter_map(|j| MetricBlock::mean(&rows.iter().map(|r| r[j]).collect::<Vec<_>>()))
        .collect()
}

impl EffectivenessReport {
    /// Pairs each trial's clean and poisoned metrics; `pairs[t]` is trial `t`.
    pub fn from_trials(method: &str, ks: &[usize], pairs: &[(RankingResult, RankingResult)]) -> Result<Self> {
        let split_hash = pairs
            .first()
            .map(|p| p.0.split_hash.clone())
            .ok_or_else(|| DldaError::invalid("no trials to report"))?;
        let mut per_trial = Vec::with_capacity(pairs.len());
        for (t, (clean, poisoned)) in pairs.iter().enumerate() {
            if clean.split_hash != split_hash {
                return Err(DldaError::invalid("trials were evaluated on different splits"));
            }
            per_trial.push(TrialEffectiveness {
                trial: t,
                delta: global_delta(clean, poisoned)?,
                clean: clean.blocks.clone(),
                poisoned: poisoned.blocks.clone(),
            });
        }
        let pick = |f: fn(&TrialEffectiveness) -> &[MetricBlock]| {
            mean_blocks(&per_trial.iter().map(f).collect::<Vec<_>>(), ks)
        };
        Ok(Self {
            schema_version: SCHEMA_VERSION,
            method: method.to_string(),
            split_hash,
            ks: ks.to_vec(),
            trials: pairs.len(),
            mean_clean: pick(|t| &t.clean),
            mean_poisoned: pick(|t| &t.poisoned),
            mean_delta: pick(|t| &t.delta),
            per_trial,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StealthReport {
    pub schema_version: u32,
    pub method: String,
    pub config: StealthConfig,
    pub per_trial: Vec<StealthMetrics>,
    pub absent: Vec<String>,
}

impl StealthReport {
    pub fn new(method: &str, config: StealthConfig, per_trial: Vec<StealthMetrics>) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            method: method.to_string(),
            config,
            per_trial,
            absent: ABSENT_DETECTORS.iter().map(|s| s.to_string()).collect(),
        }
    }
}

/// Reads a report and checks its `schema_version` before full decoding.
pub fn read_report<T: serde::de::DeserializeOwned>(path: &std::path::Path) -> Result<T> {
    if !path.exists() {
        return Err(DldaError::MissingArtifact(path.to_path_buf()));
    }
    let text = std::fs::read_to_string(path).map_err(|e| DldaError::io(path, e))?;
    let raw: serde_json::Value = serde_json::from_str(&text)?;
    let found = raw.get("schema_version").and_then(|v| v.as_u64()).unwrap_or(0) as u32;
    if found != SCHEMA_VERSION {
        return Err(DldaError::SchemaMismatch {
            path: path.to_path_buf(),
            found,
            expected: SCHEMA_VERSION,
        });
    }
    Ok(serde_json::from_value(raw)?)
}
