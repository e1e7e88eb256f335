//! Ranking metrics, repeated random train/test splits, and the
//! reference-based baseline (CVE id in the commit message, or the commit
//! linked from the source document's references).

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::UniversalScaler;
use crate::ranker::{
    self, build_training_set, AdvisoryCandidates, ModelKind, RankError, RankedList,
};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("no truth entry for advisory {0}")]
    MissingTruth(String),
    #[error("dataset has {got} advisories, need at least {need}")]
    TooFewAdvisories { got: usize, need: usize },
    #[error("train fraction {0} leaves an empty train or test side")]
    BadSplitRatio(f64),
    #[error(transparent)]
    Rank(#[from] RankError),
    #[error(transparent)]
    Feature(#[from] crate::features::FeatureError),
}

pub const RECALL_KS: [usize; 3] = [5, 10, 20];

/// Ranking quality over a set of advisories. Percentages are 0–100.
///
/// `avg_position` is the mean 1-based rank of the best-ranked known fix.
/// Advisories whose candidate set contains no known fix are excluded from
/// precision/recall/avg_position but count in selection_recall's
/// denominator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub precision: f64,
    pub avg_position: f64,
    pub recall_at: BTreeMap<usize, f64>,
    pub selection_recall: f64,
    pub n_advisories: usize,
    pub n_ranked: usize,
}

/// Scores ranked lists against the known fixes.
pub fn compute_metrics(
    rankings: &[RankedList],
    truth: &BTreeMap<String, BTreeSet<String>>,
) -> Result<Metrics, EvalError> {
    let mut best_ranks: Vec<Option<usize>> = Vec::with_capacity(rankings.len());
    for ranking in rankings {
        let fixes = truth
            .get(&ranking.advisory_id)
            .ok_or_else(|| EvalError::MissingTruth(ranking.advisory_id.clone()))?;
        let best = ranking
            .entries
            .iter()
            .position(|e| fixes.contains(&e.commit_id))
            .map(|idx| idx + 1);
        best_ranks.push(best);
    }

    let ranked: Vec<usize> = best_ranks.iter().flatten().copied().collect();
    let n = rankings.len();
    let n_ranked = ranked.len();
    let pct = |count: usize| {
        if n_ranked == 0 {
            0.0
        } else {
            100.0 * count as f64 / n_ranked as f64
        }
    };

    Ok(Metrics {
        precision: pct(ranked.iter().filter(|r| **r == 1).count()),
        avg_position: if n_ranked == 0 {
            0.0
        } else {
            ranked.iter().sum::<usize>() as f64 / n_ranked as f64
        },
        recall_at: RECALL_KS
            .iter()
            .map(|&k| (k, pct(ranked.iter().filter(|r| **r <= k).count())))
            .collect(),
        selection_recall: if n == 0 {
            0.0
        } else {
            100.0 * n_ranked as f64 / n as f64
        },
        n_advisories: n,
        n_ranked,
    })
}

/// Mean and population standard deviation of one metric across splits.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub stddev: f64,
}

fn stat(values: impl Iterator<Item = f64> + Clone) -> Stat {
    let n = values.clone().count() as f64;
    if n == 0.0 {
        return Stat { mean: 0.0, stddev: 0.0 };
    }
    let mean = values.clone().sum::<f64>() / n;
    let variance = values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    Stat {
        mean,
        stddev: variance.sqrt(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsStats {
    pub precision: Stat,
    pub avg_position: Stat,
    pub recall_at: BTreeMap<usize, Stat>,
    pub selection_recall: Stat,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SplitEvalReport {
    pub model_kind: ModelKind,
    pub n_splits: usize,
    pub train_fraction: f64,
    pub seed: u64,
    pub per_split: Vec<Metrics>,
    pub aggregate: MetricsStats,
}

/// Runs `n_splits` random train/test splits by advisory (never by commit):
/// fit the universal scaler and the model on the train side, rank the test
/// side, score it. Deterministic given the seed.
pub fn split_eval(
    dataset: &[AdvisoryCandidates],
    kind: ModelKind,
    n_splits: usize,
    train_fraction: f64,
    seed: u64,
) -> Result<SplitEvalReport, EvalError> {
    const MIN_ADVISORIES: usize = 5;
    if dataset.len() < MIN_ADVISORIES {
        return Err(EvalError::TooFewAdvisories {
            got: dataset.len(),
            need: MIN_ADVISORIES,
        });
    }
    let train_n = (dataset.len() as f64 * train_fraction).floor() as usize;
    if train_n == 0 || train_n >= dataset.len() {
        return Err(EvalError::BadSplitRatio(train_fraction));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut per_split = Vec::with_capacity(n_splits);
    for _ in 0..n_splits {
        let mut indices: Vec<usize> = (0..dataset.len()).collect();
        indices.shuffle(&mut rng);
        let sampling_seed: u64 = rng.random();

        let train: Vec<AdvisoryCandidates> = indices[..train_n]
            .iter()
            .map(|&i| dataset[i].clone())
            .collect();
        let test: Vec<AdvisoryCandidates> = indices[train_n..]
            .iter()
            .map(|&i| dataset[i].clone())
            .collect();

        let metrics = eval_one_split(&train, &test, kind, sampling_seed)?;
        per_split.push(metrics);
    }

    let aggregate = MetricsStats {
        precision: stat(per_split.iter().map(|m| m.precision)),
        avg_position: stat(per_split.iter().map(|m| m.avg_position)),
        recall_at: RECALL_KS
            .iter()
            .map(|&k| (k, stat(per_split.iter().map(|m| m.recall_at[&k]))))
            .collect(),
        selection_recall: stat(per_split.iter().map(|m| m.selection_recall)),
    };

    Ok(SplitEvalReport {
        model_kind: kind,
        n_splits,
        train_fraction,
        seed,
        per_split,
        aggregate,
    })
}

/// Scales train and test matrices (universal bounds from the train side
/// only), trains, ranks the test side, and scores it.
fn eval_one_split(
    train: &[AdvisoryCandidates],
    test: &[AdvisoryCandidates],
    kind: ModelKind,
    sampling_seed: u64,
) -> Result<Metrics, EvalError> {
    let scaler = UniversalScaler::fit(
        train
            .iter()
            .flat_map(|a| a.rows.iter().map(|r| &r.features)),
    );
    let scaled_train = scale_dataset(train, &scaler)?;
    let scaled_test = scale_dataset(test, &scaler)?;

    let training_set = build_training_set(&scaled_train, sampling_seed);
    let model = ranker::train(&training_set, kind)?;

    let mut rankings = Vec::with_capacity(scaled_test.len());
    let mut truth: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
    for advisory in &scaled_test {
        rankings.push(ranker::rank(&model, &advisory.advisory_id, &advisory.rows)?);
        truth.insert(advisory.advisory_id.clone(), advisory.fixes.clone());
    }
    compute_metrics(&rankings, &truth)
}

/// Applies the combined scaling scheme to every advisory's matrix.
pub fn scale_dataset(
    dataset: &[AdvisoryCandidates],
    scaler: &UniversalScaler,
) -> Result<Vec<AdvisoryCandidates>, EvalError> {
    let mut out = Vec::with_capacity(dataset.len());
    for advisory in dataset {
        let mut scaled = advisory.clone();
        let mut matrix: Vec<crate::features::FeatureVector> =
            scaled.rows.iter().map(|r| r.features).collect();
        crate::features::scale_matrix(&mut matrix, scaler)?;
        for (row, features) in scaled.rows.iter_mut().zip(matrix) {
            row.features = features;
        }
        out.push(scaled);
    }
    Ok(out)
}

/// Input to the baseline: the known fixes with their messages, and the
/// commit prefixes linked from the advisory's references.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BaselineEntry {
    pub cve_id: String,
    pub fixes: BTreeSet<String>,
    pub nvd_commit_prefixes: BTreeSet<String>,
    /// fix commit id → commit message
    pub fix_messages: BTreeMap<String, String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BaselineMethod {
    pub fix_commits_found: usize,
    pub fix_commits_found_pct: f64,
    pub advisories_found: usize,
    pub advisories_found_pct: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BaselineReport {
    pub n_advisories: usize,
    pub n_fix_commits: usize,
    pub cve_id_in_message: BaselineMethod,
    pub referred_by_nvd: BaselineMethod,
    pub combined: BaselineMethod,
}

/// How many known fixes the two reference-based methods find: a fix counts
/// for method A when its own message contains the advisory's CVE id, for
/// method B when its 8-char prefix appears among the advisory's reference
/// links; combined is their union.
pub fn jimenez_baseline(entries: &[BaselineEntry]) -> BaselineReport {
    let mut commits = [0usize; 3];
    let mut advisories = [0usize; 3];
    let mut n_fix_commits = 0usize;

    for entry in entries {
        let mut advisory_hit = [false; 3];
        let id_lower = entry.cve_id.to_lowercase();
        for fix in &entry.fixes {
            n_fix_commits += 1;
            let by_message = entry
                .fix_messages
                .get(fix)
                .is_some_and(|m| m.to_lowercase().contains(&id_lower));
            let prefix: String = fix.chars().take(8).collect::<String>().to_lowercase();
            let by_reference = entry.nvd_commit_prefixes.contains(&prefix);
            for (slot, hit) in [by_message, by_reference, by_message || by_reference]
                .into_iter()
                .enumerate()
            {
                if hit {
                    commits[slot] += 1;
                    advisory_hit[slot] = true;
                }
            }
        }
        for (slot, hit) in advisory_hit.into_iter().enumerate() {
            if hit {
                advisories[slot] += 1;
            }
        }
    }

    let method = |slot: usize| BaselineMethod {
        fix_commits_found: commits[slot],
        fix_commits_found_pct: if n_fix_commits == 0 {
            0.0
        } else {
            100.0 * commits[slot] as f64 / n_fix_commits as f64
        },
        advisories_found: advisories[slot],
        advisories_found_pct: if entries.is_empty() {
            0.0
        } else {
            100.0 * advisories[slot] as f64 / entries.len() as f64
        },
    };

    BaselineReport {
        n_advisories: entries.len(),
        n_fix_commits,
        cve_id_in_message: method(0),
        referred_by_nvd: method(1),
        combined: method(2),
    }
}
