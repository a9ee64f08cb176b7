//! Projection of dense latents into sparse binary fake profiles.

use std::fs;
use std::io::Write;
use std::path::Path;

use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::data::TargetSet;
use crate::error::{DldaError, Result};
use crate::recommender::{dot, rank_order, EmbeddingTable};
use crate::rng::StageRng;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProjectionConfig {
    pub lambda_pois: f64,
    /// Threshold on standardized scores; `None` keeps every top-n item.
    pub delta: Option<f64>,
    pub n_max: usize,
}

impl ProjectionConfig {
    pub fn validate(&self, targets: usize) -> Result<()> {
        if !(self.lambda_pois > 0.0 && self.lambda_pois.is_finite()) {
            return Err(DldaError::invalid(format!("lambda_pois must be positive, got {}", self.lambda_pois)));
        }
        if self.n_max < targets {
            return Err(DldaError::invalid(format!(
                "n_max {} is below the {targets} target items",
                self.n_max
            )));
        }
        Ok(())
    }
}

/// `s_i = E_i . z` for every item.
pub fn score_items(z: &[f64], table: &EmbeddingTable) -> Vec<f64> {
    assert_eq!(z.len(), table.dim(), "latent width must match the embedding width");
    (0..table.item_count()).map(|i| dot(table.item(i), z)).collect()
}

/// Z-scores of `s` (population deviation). A constant vector maps to zeros.
pub fn standardize(s: &[f64]) -> Vec<f64> {
    let n = s.len() as f64;
    let mean = s.iter().sum::<f64>() / n;
    let var = s.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let sd = var.sqrt();
    if !(sd > 0.0) {
        return vec![0.0; s.len()];
    }
    s.iter().map(|v| (v - mean) / sd).collect()
}

/// A Poisson draw clamped to `min(n, N, n_max)`.
pub fn draw_count(lambda_pois: f64, items: usize, n_max: usize, rng: &mut StageRng) -> usize {
    let n = Poisson::new(lambda_pois).expect("positive rate").sample(rng) as usize;
    n.min(items).min(n_max)
}

/// The `n` highest-scoring items (ties to the lower index) whose score is at
/// least `delta`, in rank order.
pub fn select_active(s: &[f64], n: usize, delta: Option<f64>) -> Vec<usize> {
    let mut cand: Vec<(f64, usize)> = s.iter().enumerate().map(|(i, &v)| (v, i)).collect();
    cand.sort_unstable_by(rank_order);
    cand.truncate(n);
    cand.into_iter()
        .filter(|(v, _)| delta.is_none_or(|d| *v >= d))
        .map(|(_, i)| i)
        .collect()
}

/// Binary row that is 1 exactly on `active` and `targets`.
pub fn binarize(active: &[usize], targets: &[usize], items: usize) -> Vec<bool> {
    let mut row = vec![false; items];
    for &i in active.iter().chain(targets) {
        row[i] = true;
    }
    row
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProjectedRow {
    /// Sorted item indices set to 1.
    pub items: Vec<usize>,
    pub drawn_n: usize,
    /// Size of the active set after thresholding and before trimming.
    pub active: usize,
}

/// Scores, draws a count, thresholds standardized scores and binarizes. When
/// targets plus actives would exceed `n_max`, the lowest-scoring non-target
/// actives are dropped.
pub fn project_profile(
    z: &[f64],
    table: &EmbeddingTable,
    config: &ProjectionConfig,
    targets: &TargetSet,
    rng: &mut StageRng,
) -> ProjectedRow {
    let s = standardize(&score_items(z, table));
    let n = draw_count(config.lambda_pois, s.len(), config.n_max, rng);
    let active = select_active(&s, n, config.delta);
    let budget = config.n_max.saturating_sub(targets.len());
    let kept: Vec<usize> = active
        .iter()
        .copied()
        .filter(|i| !targets.contains(*i))
        .take(budget)
        .collect();
    let row = binarize(&kept, &targets.items, s.len());
    ProjectedRow {
        items: row.iter().enumerate().filter(|(_, &b)| b).map(|(i, _)| i).collect(),
        drawn_n: n,
        active: active.len(),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub method: String,
    pub seed: u64,
    pub condition_user: Option<usize>,
    pub condition_item: Option<usize>,
    pub condition_fallback: bool,
    pub drawn_n: Option<usize>,
    pub active: usize,
}

impl Provenance {
    pub fn heuristic(seed: u64) -> Self {
        Self {
            method: "heuristic".into(),
            seed,
            condition_user: None,
            condition_item: None,
            condition_fallback: false,
            drawn_n: None,
            active: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FakeProfile {
    pub items: Vec<usize>,
    pub provenance: Provenance,
}

/// Generated fake rows over `item_count` items, in fake-user order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FakeProfileSet {
    item_count: usize,
    profiles: Vec<FakeProfile>,
}

impl FakeProfileSet {
    pub fn new(item_count: usize, profiles: Vec<FakeProfile>) -> Self {
        Self { item_count, profiles }
    }

    pub fn item_count(&self) -> usize {
        self.item_count
    }

    pub fn profiles(&self) -> &[FakeProfile] {
        &self.profiles
    }

    pub fn len(&self) -> usize {
        self.profiles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.profiles.is_empty()
    }

    pub fn rows(&self) -> Vec<Vec<bool>> {
        self.profiles
            .iter()
            .map(|p| binarize(&p.items, &[], self.item_count))
            .collect()
    }

    /// `fake_user_id <TAB> item_id`, one line per interaction.
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for (k, p) in self.profiles.iter().enumerate() {
            for i in &p.items {
                out.push_str(&format!("{k}\t{i}\n"));
            }
        }
        out
    }

    pub fn from_tsv(text: &str, item_count: usize, provenance: Vec<Provenance>) -> Result<Self> {
        let mut rows: Vec<Vec<usize>> = vec![Vec::new(); provenance.len()];
        for (n, line) in text.lines().enumerate() {
            let mut parts = line.split('\t');
            let parse = |p: Option<&str>| -> Result<usize> {
                p.and_then(|v| v.trim().parse().ok()).ok_or(DldaError::Parse {
                    line: n + 1,
                    message: format!("expected `fake_id<TAB>item_id`, got {line:?}"),
                })
            };
            let (k, i) = (parse(parts.next())?, parse(parts.next())?);
            if k >= rows.len() || i >= item_count {
                return Err(DldaError::Parse {
                    line: n + 1,
                    message: format!("index out of range in {line:?}"),
                });
            }
            rows[k].push(i);
        }
        let profiles = rows
            .into_iter()
            .zip(provenance)
            .map(|(items, provenance)| FakeProfile { items, provenance })
            .collect();
        Ok(Self::new(item_count, profiles))
    }

    pub fn write(&self, tsv: &Path, provenance_json: &Path) -> Result<()> {
        fs::write(tsv, self.to_tsv()).map_err(|e| DldaError::io(tsv, e))?;
        let prov: Vec<&Provenance> = self.profiles.iter().map(|p| &p.provenance).collect();
        let mut f = fs::File::create(provenance_json).map_err(|e| DldaError::io(provenance_json, e))?;
        serde_json::to_writer_pretty(&mut f, &ProvenanceFile { item_count: self.item_count, rows: prov })?;
        f.write_all(b"\n").map_err(|e| DldaError::io(provenance_json, e))
    }

    pub fn read(tsv: &Path, provenance_json: &Path) -> Result<Self> {
        for p in [tsv, provenance_json] {
            if !p.exists() {
                return Err(DldaError::MissingArtifact(p.to_path_buf()));
            }
        }
        let text = fs::read_to_string(tsv).map_err(|e| DldaError::io(tsv, e))?;
        let raw = fs::read_to_string(provenance_json).map_err(|e| DldaError::io(provenance_json, e))?;
        let prov: ProvenanceOwned = serde_json::from_str(&raw)?;
        Self::from_tsv(&text, prov.item_count, prov.rows)
    }
}

#[derive(Serialize)]
struct ProvenanceFile<'a> {
    item_count: usize,
    rows: Vec<&'a Provenance>,
}

#[derive(Deserialize)]
struct ProvenanceOwned {
    item_count: usize,
    rows: Vec<Provenance>,
}
