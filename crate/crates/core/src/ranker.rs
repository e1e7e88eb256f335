//! Ranks candidate commits by a learned probability of being the fix.
//!
//! Training data pairs one known fix with one sampled non-fix per advisory.
//! The default ranker is L2-regularized logistic regression trained by
//! full-batch gradient descent; a k-nearest-neighbours ranker is available
//! as a sanity check. Features must arrive pre-scaled.

use std::collections::BTreeSet;
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::{FeatureVector, UniversalScaler, FEATURE_COUNT, FEATURE_NAMES};
use crate::features::col;

#[derive(Debug, Error)]
pub enum RankError {
    #[error("training set needs at least two rows with both labels present")]
    DegenerateLabels,
    #[error("model has no stored rows to predict from")]
    UnfittedModel,
    #[error("no known fix inside the candidate set of {0}")]
    NoFixInCandidates(String),
    #[error("cannot read model {path}: {reason}")]
    ModelIo { path: String, reason: String },
    #[error("model document is invalid: {0}")]
    ModelFormat(String),
}

/// One candidate commit with its (scaled) feature row.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CandidateRow {
    pub commit_id: String,
    pub features: FeatureVector,
}

/// Everything the ranker needs to know about one advisory: its candidates,
/// their feature rows, and which commits are known fixes.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AdvisoryCandidates {
    pub advisory_id: String,
    pub rows: Vec<CandidateRow>,
    pub fixes: BTreeSet<String>,
}

impl AdvisoryCandidates {
    pub fn has_fix_in_candidates(&self) -> bool {
        self.rows.iter().any(|r| self.fixes.contains(&r.commit_id))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainingRow {
    pub features: FeatureVector,
    pub label: u8,
    pub advisory_id: String,
    pub commit_id: String,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct TrainingSet {
    pub rows: Vec<TrainingRow>,
    /// Advisories skipped because no known fix (or no non-fix) was inside
    /// their candidate set.
    pub skipped: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogisticHyper {
    pub l2: f64,
    pub learning_rate: f64,
    pub max_epochs: usize,
    pub tolerance: f64,
}

impl Default for LogisticHyper {
    fn default() -> Self {
        Self {
            l2: 1.0,
            learning_rate: 0.1,
            max_epochs: 10_000,
            tolerance: 1e-6,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KnnHyper {
    pub k: usize,
    pub minkowski_p: f64,
}

impl Default for KnnHyper {
    fn default() -> Self {
        Self { k: 25, minkowski_p: 2.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Logistic,
    Knn,
}

impl std::str::FromStr for ModelKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "logistic" | "lr" => Ok(Self::Logistic),
            "knn" => Ok(Self::Knn),
            other => Err(format!("unknown model kind `{other}` (expected logistic or knn)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelParams {
    Logistic {
        weights: [f64; FEATURE_COUNT],
        bias: f64,
        hyper: LogisticHyper,
    },
    Knn {
        rows: Vec<(FeatureVector, u8)>,
        hyper: KnnHyper,
    },
}

/// A model plus the universal scaler it was fitted with, as persisted to
/// disk. Feature names are embedded so the column order is self-describing.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelDocument {
    pub version: u32,
    pub feature_names: Vec<String>,
    pub scaling: UniversalScaler,
    pub model: ModelParams,
}

pub const MODEL_DOCUMENT_VERSION: u32 = 1;

impl ModelDocument {
    pub fn new(model: ModelParams, scaling: UniversalScaler) -> Self {
        Self {
            version: MODEL_DOCUMENT_VERSION,
            feature_names: FEATURE_NAMES.iter().map(|s| s.to_string()).collect(),
            scaling,
            model,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, RankError> {
        let doc: Self =
            serde_json::from_str(text).map_err(|e| RankError::ModelFormat(e.to_string()))?;
        if doc.version != MODEL_DOCUMENT_VERSION {
            return Err(RankError::ModelFormat(format!(
                "unsupported model version {}",
                doc.version
            )));
        }
        if doc.feature_names != FEATURE_NAMES {
            return Err(RankError::ModelFormat(
                "feature name list does not match this build".to_string(),
            ));
        }
        Ok(doc)
    }

    pub fn save(&self, path: &Path) -> Result<(), RankError> {
        std::fs::write(path, self.to_json()).map_err(|e| RankError::ModelIo {
            path: path.display().to_string(),
            reason: e.to_string(),
        })
    }

    pub fn load(path: &Path) -> Result<Self, RankError> {
        let text = std::fs::read_to_string(path).map_err(|e| RankError::ModelIo {
            path: path.display().to_string(),
            reason: e.to_string(),
        })?;
        Self::from_json(&text)
    }

    /// (label, weight) pairs sorted by |weight| descending, for the
    /// coefficient table. Empty for kNN models.
    pub fn coefficients(&self) -> Vec<(&'static str, f64)> {
        match &self.model {
            ModelParams::Logistic { weights, .. } => {
                let mut out: Vec<(&'static str, f64)> = crate::features::FEATURE_LABELS
                    .iter()
                    .zip(weights.iter())
                    .map(|(l, w)| (*l, *w))
                    .collect();
                out.sort_by(|a, b| b.1.abs().partial_cmp(&a.1.abs()).unwrap().then(a.0.cmp(b.0)));
                out
            }
            ModelParams::Knn { .. } => Vec::new(),
        }
    }
}

/// Candidates ordered by predicted fix probability.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RankedList {
    pub advisory_id: String,
    pub entries: Vec<RankedEntry>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RankedEntry {
    pub commit_id: String,
    pub probability: f64,
    pub features: FeatureVector,
}

/// Builds the training set: per advisory one positive row (the first known
/// fix by commit id) and one uniformly sampled non-fix row. Advisories
/// without a fix or without a non-fix inside their candidates are skipped
/// with a warning. Deterministic given the seed.
pub fn build_training_set(advisories: &[AdvisoryCandidates], seed: u64) -> TrainingSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut set = TrainingSet::default();
    for advisory in advisories {
        let mut fixes: Vec<&CandidateRow> = advisory
            .rows
            .iter()
            .filter(|r| advisory.fixes.contains(&r.commit_id))
            .collect();
        let mut non_fixes: Vec<&CandidateRow> = advisory
            .rows
            .iter()
            .filter(|r| !advisory.fixes.contains(&r.commit_id))
            .collect();
        fixes.sort_by(|a, b| a.commit_id.cmp(&b.commit_id));
        non_fixes.sort_by(|a, b| a.commit_id.cmp(&b.commit_id));

        let (Some(positive), false) = (fixes.first(), non_fixes.is_empty()) else {
            log::warn!(
                "skipping {}: candidate set has no usable positive/negative pair",
                advisory.advisory_id
            );
            set.skipped.push(advisory.advisory_id.clone());
            continue;
        };
        let negative = non_fixes[rng.random_range(0..non_fixes.len())];
        set.rows.push(TrainingRow {
            features: positive.features,
            label: 1,
            advisory_id: advisory.advisory_id.clone(),
            commit_id: positive.commit_id.clone(),
        });
        set.rows.push(TrainingRow {
            features: negative.features,
            label: 0,
            advisory_id: advisory.advisory_id.clone(),
            commit_id: negative.commit_id.clone(),
        });
    }
    set
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

fn softplus(x: f64) -> f64 {
    // ln(1 + e^x) without overflow
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn dot(weights: &[f64; FEATURE_COUNT], x: &FeatureVector) -> f64 {
    weights.iter().zip(x.0.iter()).map(|(w, v)| w * v).sum()
}

/// Mean cross-entropy plus `l2/(2n) * ||w||²` (bias unregularized).
pub fn logistic_loss(
    weights: &[f64; FEATURE_COUNT],
    bias: f64,
    rows: &[(FeatureVector, u8)],
    l2: f64,
) -> f64 {
    let n = rows.len() as f64;
    let data: f64 = rows
        .iter()
        .map(|(x, y)| {
            let z = dot(weights, x) + bias;
            if *y == 1 {
                softplus(-z)
            } else {
                softplus(z)
            }
        })
        .sum();
    let reg: f64 = weights.iter().map(|w| w * w).sum::<f64>() * l2 / (2.0 * n);
    data / n + reg
}

/// Analytic gradient of [`logistic_loss`].
pub fn logistic_gradient(
    weights: &[f64; FEATURE_COUNT],
    bias: f64,
    rows: &[(FeatureVector, u8)],
    l2: f64,
) -> ([f64; FEATURE_COUNT], f64) {
    let n = rows.len() as f64;
    let mut grad_w = [0.0; FEATURE_COUNT];
    let mut grad_b = 0.0;
    for (x, y) in rows {
        let residual = sigmoid(dot(weights, x) + bias) - *y as f64;
        for (g, v) in grad_w.iter_mut().zip(x.0.iter()) {
            *g += residual * v;
        }
        grad_b += residual;
    }
    for (g, w) in grad_w.iter_mut().zip(weights.iter()) {
        *g = *g / n + l2 * w / n;
    }
    (grad_w, grad_b / n)
}

/// Trains logistic regression by full-batch gradient descent from zero
/// weights, until the gradient's infinity norm drops under the tolerance or
/// the epoch cap is hit. Deterministic.
pub fn train_logistic(set: &TrainingSet, hyper: LogisticHyper) -> Result<ModelParams, RankError> {
    let rows: Vec<(FeatureVector, u8)> =
        set.rows.iter().map(|r| (r.features, r.label)).collect();
    if rows.len() < 2
        || !rows.iter().any(|(_, y)| *y == 1)
        || !rows.iter().any(|(_, y)| *y == 0)
    {
        return Err(RankError::DegenerateLabels);
    }

    let mut weights = [0.0; FEATURE_COUNT];
    let mut bias = 0.0;
    for _ in 0..hyper.max_epochs {
        let (grad_w, grad_b) = logistic_gradient(&weights, bias, &rows, hyper.l2);
        let inf_norm = grad_w
            .iter()
            .chain(std::iter::once(&grad_b))
            .fold(0.0f64, |m, g| m.max(g.abs()));
        if inf_norm < hyper.tolerance {
            break;
        }
        for (w, g) in weights.iter_mut().zip(grad_w.iter()) {
            *w -= hyper.learning_rate * g;
        }
        bias -= hyper.learning_rate * grad_b;
    }
    debug_assert!(weights.iter().all(|w| w.is_finite()) && bias.is_finite());
    Ok(ModelParams::Logistic {
        weights,
        bias,
        hyper,
    })
}

/// Wraps the training rows as a k-nearest-neighbours model.
pub fn train_knn(set: &TrainingSet, hyper: KnnHyper) -> Result<ModelParams, RankError> {
    if set.rows.is_empty() {
        return Err(RankError::DegenerateLabels);
    }
    Ok(ModelParams::Knn {
        rows: set.rows.iter().map(|r| (r.features, r.label)).collect(),
        hyper,
    })
}

pub fn train(set: &TrainingSet, kind: ModelKind) -> Result<ModelParams, RankError> {
    match kind {
        ModelKind::Logistic => train_logistic(set, LogisticHyper::default()),
        ModelKind::Knn => train_knn(set, KnnHyper::default()),
    }
}

/// Predicted fix probability per row: `σ(w·x + b)` for logistic, fraction of
/// positive labels among the k nearest stored rows for kNN.
pub fn predict_proba(model: &ModelParams, rows: &[FeatureVector]) -> Result<Vec<f64>, RankError> {
    match model {
        ModelParams::Logistic { weights, bias, .. } => Ok(rows
            .iter()
            .map(|x| sigmoid(dot(weights, x) + *bias))
            .collect()),
        ModelParams::Knn { rows: stored, hyper } => {
            if stored.is_empty() || hyper.k == 0 {
                return Err(RankError::UnfittedModel);
            }
            Ok(rows
                .iter()
                .map(|x| {
                    let mut distances: Vec<(f64, usize)> = stored
                        .iter()
                        .enumerate()
                        .map(|(i, (s, _))| (minkowski(x, s, hyper.minkowski_p), i))
                        .collect();
                    distances
                        .sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
                    let k = hyper.k.min(distances.len());
                    let positives = distances[..k]
                        .iter()
                        .filter(|(_, i)| stored[*i].1 == 1)
                        .count();
                    positives as f64 / k as f64
                })
                .collect())
        }
    }
}

fn minkowski(a: &FeatureVector, b: &FeatureVector, p: f64) -> f64 {
    a.0.iter()
        .zip(b.0.iter())
        .map(|(x, y)| (x - y).abs().powf(p))
        .sum::<f64>()
        .powf(1.0 / p)
}

/// Ranks candidate rows by probability descending. Ties break toward
/// commits closer to publication (`f20 + f21` descending), then ascending
/// commit id, so the ordering is total and deterministic.
pub fn rank(
    model: &ModelParams,
    advisory_id: &str,
    rows: &[CandidateRow],
) -> Result<RankedList, RankError> {
    let features: Vec<FeatureVector> = rows.iter().map(|r| r.features).collect();
    let probabilities = predict_proba(model, &features)?;
    let mut entries: Vec<RankedEntry> = rows
        .iter()
        .zip(probabilities)
        .map(|(row, probability)| RankedEntry {
            commit_id: row.commit_id.clone(),
            probability,
            features: row.features,
        })
        .collect();
    entries.sort_by(|a, b| {
        let time_a = a.features.0[col::TIME_DISTANCE_BEFORE] + a.features.0[col::TIME_DISTANCE_AFTER];
        let time_b = b.features.0[col::TIME_DISTANCE_BEFORE] + b.features.0[col::TIME_DISTANCE_AFTER];
        b.probability
            .total_cmp(&a.probability)
            .then_with(|| time_b.total_cmp(&time_a))
            .then_with(|| a.commit_id.cmp(&b.commit_id))
    });
    Ok(RankedList {
        advisory_id: advisory_id.to_string(),
        entries,
    })
}
