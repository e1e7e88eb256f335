//! The 23-dimensional feature vector computed for every (advisory, candidate
//! commit) pair, and the combined scaling scheme applied before ranking.

use std::collections::BTreeMap;
use std::collections::BTreeSet;
use std::sync::OnceLock;

use chrono::{DateTime, Utc};
use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::advisory::AdvisoryRecord;
use crate::repominer::{map_version_to_tag, CommitRecord, Repo, RepoError, TagTree};
use crate::textprep::{self, TokenList};

pub mod tfidf;

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("universal scaler has no bounds for column `{0}`")]
    UnfittedScaler(String),
}

pub const FEATURE_COUNT: usize = 23;

/// Column indices into a [`FeatureVector`].
pub mod col {
    pub const VULN_ID_IN_MESSAGE: usize = 0;
    pub const OTHER_VULN_ID_IN_MESSAGE: usize = 1;
    pub const REFERRED_BY_NVD: usize = 2;
    pub const REFERRED_BY_ADVISORIES: usize = 3;
    pub const N_HUNKS: usize = 4;
    pub const AVG_HUNK_SIZE: usize = 5;
    pub const N_CHANGED_FILES: usize = 6;
    pub const HAS_GITHUB_ISSUE_REF: usize = 7;
    pub const HAS_JIRA_REF: usize = 8;
    pub const PATH_SIMILARITY: usize = 9;
    pub const MSG_SIM_DESCRIPTION: usize = 10;
    pub const MSG_SIM_CODE_TOKENS: usize = 11;
    pub const MSG_SIM_REF_KEYWORDS: usize = 12;
    pub const FILES_SIM_DESCRIPTION: usize = 13;
    pub const FILES_SIM_CODE_TOKENS: usize = 14;
    pub const FILES_SIM_REF_KEYWORDS: usize = 15;
    pub const DIFF_SIM_DESCRIPTION: usize = 16;
    pub const DIFF_SIM_CODE_TOKENS: usize = 17;
    pub const DIFF_SIM_REF_KEYWORDS: usize = 18;
    pub const TIME_DISTANCE_BEFORE: usize = 19;
    pub const TIME_DISTANCE_AFTER: usize = 20;
    pub const REACHABILITY: usize = 21;
    pub const VULN_TIMESTAMP: usize = 22;
}

/// Canonical column names, also used in serialized models and reports.
pub const FEATURE_NAMES: [&str; FEATURE_COUNT] = [
    "vuln_id_in_message",
    "other_vuln_id_in_message",
    "referred_by_nvd",
    "referred_by_advisories",
    "n_hunks",
    "avg_hunk_size",
    "n_changed_files",
    "has_github_issue_ref",
    "has_jira_ref",
    "path_similarity",
    "msg_sim_description",
    "msg_sim_code_tokens",
    "msg_sim_ref_keywords",
    "files_sim_description",
    "files_sim_code_tokens",
    "files_sim_ref_keywords",
    "diff_sim_description",
    "diff_sim_code_tokens",
    "diff_sim_ref_keywords",
    "time_distance_before",
    "time_distance_after",
    "reachability",
    "vulnerability_timestamp",
];

/// Human-readable labels for the coefficient table and breakdowns.
pub const FEATURE_LABELS: [&str; FEATURE_COUNT] = [
    "Vulnerability ID in message",
    "Other vulnerability ID in message",
    "Referred to by NVD",
    "Referred to by advisories",
    "Number of hunks",
    "Average hunk size",
    "Number of changed files",
    "Message contains issue reference",
    "Message contains Jira reference",
    "Path similarity score",
    "Message similarity: description",
    "Message similarity: code tokens",
    "Message similarity: references content",
    "Changed files similarity: description",
    "Changed files similarity: code tokens",
    "Changed files similarity: references content",
    "Git diff similarity: description",
    "Git diff similarity: code tokens",
    "Git diff similarity: references content",
    "Time distance before",
    "Time distance after",
    "Reachability score",
    "Vulnerability timestamp",
];

/// One candidate's 23 feature values, in [`FEATURE_NAMES`] order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FeatureVector(pub [f64; FEATURE_COUNT]);

impl FeatureVector {
    pub fn zeros() -> Self {
        Self([0.0; FEATURE_COUNT])
    }

    pub fn values(&self) -> &[f64; FEATURE_COUNT] {
        &self.0
    }

    /// (name, value) pairs in column order.
    pub fn named(&self) -> impl Iterator<Item = (&'static str, f64)> + '_ {
        FEATURE_NAMES.iter().zip(self.0.iter()).map(|(n, v)| (*n, *v))
    }
}

impl Default for FeatureVector {
    fn default() -> Self {
        Self::zeros()
    }
}

/// Cross-cutting pipeline constants.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub diff_line_limit: usize,
    pub commit_prefix_len: usize,
    pub top_k_reference_words: usize,
    pub reachability_window_days: i64,
    pub reachability_decay_per_day: f64,
    pub diff_context_lines: u32,
    /// Appended to the description query against the message corpus.
    pub fix_words: Vec<String>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            diff_line_limit: 10_000,
            commit_prefix_len: 8,
            top_k_reference_words: 20,
            reachability_window_days: 100,
            reachability_decay_per_day: 0.01,
            diff_context_lines: 1,
            fix_words: [
                "security",
                "cve",
                "patch",
                "vulnerability",
                "vulnerable",
                "advisory",
                "attack",
                "exploit",
                "exploitable",
            ]
            .iter()
            .map(|s| s.to_string())
            .collect(),
        }
    }
}

/// f1/f2: the advisory's own id in the commit message, or some other CVE id.
pub fn id_features(cve_id: &str, message: &str) -> (f64, f64) {
    let message = message.to_lowercase();
    let own = message.contains(&cve_id.to_lowercase());
    let other = !own && message.contains("cve-");
    (own as u8 as f64, other as u8 as f64)
}

/// f3/f4: the candidate's 8-char prefix appears among the commit links of
/// the source document or of the scraped reference pages.
pub fn referred_features(advisory: &AdvisoryRecord, commit_id: &str, prefix_len: usize) -> (f64, f64) {
    let prefix: String = commit_id.chars().take(prefix_len).collect::<String>().to_lowercase();
    let nvd = advisory.nvd_commit_prefixes.contains(&prefix);
    let adv = advisory.advisory_commit_prefixes.contains(&prefix);
    (nvd as u8 as f64, adv as u8 as f64)
}

/// f8/f9: issue-tracker references in the commit message. The Jira pattern
/// must match a whole token and never a CVE id.
pub fn message_ref_flags(message: &str) -> (f64, f64) {
    static ISSUE: OnceLock<Regex> = OnceLock::new();
    static JIRA: OnceLock<Regex> = OnceLock::new();
    let issue = ISSUE.get_or_init(|| Regex::new(r"#[0-9]+").unwrap());
    let jira = JIRA.get_or_init(|| Regex::new(r"^[A-Z][A-Z0-9]+-[0-9]+$").unwrap());

    let has_issue = issue.is_match(message);
    let has_jira = message
        .split(|c: char| !(c.is_ascii_alphanumeric() || c == '-'))
        .any(|token| jira.is_match(token) && !token.starts_with("CVE-"));
    (has_issue as u8 as f64, has_jira as u8 as f64)
}

fn path_components(path: &str) -> Vec<&str> {
    path.split(['/', '.']).filter(|s| !s.is_empty()).collect()
}

fn path_has_extension(path: &str) -> bool {
    let basename = path.rsplit('/').next().unwrap_or(path);
    basename.split('.').filter(|s| !s.is_empty()).count() >= 2
}

/// f10: summed longest suffix overlap between each description path and the
/// best-matching changed file. Components come from splitting on `/` and `.`
/// and reversing, so comparison runs extension-first. When the description
/// path has an extension, an overlap of one (the extension alone) scores
/// zero; when it has none, extensions are removed from the changed files and
/// an overlap of one counts.
pub fn path_similarity(description_paths: &[String], changed_files: &[String]) -> f64 {
    let mut total = 0usize;
    for path in description_paths {
        let has_ext = path_has_extension(path);
        let mut desc: Vec<&str> = path_components(path);
        desc.reverse();

        let mut best = 0usize;
        for file in changed_files {
            let mut comps: Vec<&str> = path_components(file);
            comps.reverse();
            if !has_ext && path_has_extension(file) {
                comps.remove(0);
            }
            let overlap = desc.iter().zip(comps.iter()).take_while(|(a, b)| a == b).count();
            let admissible = if has_ext { overlap > 1 } else { overlap >= 1 };
            if admissible && overlap > best {
                best = overlap;
            }
        }
        total += best;
    }
    total as f64
}

/// The four similarity queries derived from one advisory.
#[derive(Debug, Clone)]
pub struct LexicalQueries {
    /// Preprocessed description with the fix words appended; compared with
    /// the commit-message corpus only.
    pub description_with_fix_words: TokenList,
    /// Plain preprocessed description; compared with files and diff corpora.
    pub description: TokenList,
    pub code_tokens: TokenList,
    pub reference_keywords: TokenList,
}

impl LexicalQueries {
    pub fn build(advisory: &AdvisoryRecord, cfg: &PipelineConfig) -> Self {
        let description = textprep::preprocess(&advisory.raw.description);
        let mut with_fix = description.clone();
        with_fix
            .0
            .extend(textprep::preprocess(&cfg.fix_words.join(" ")).0);
        Self {
            description_with_fix_words: with_fix,
            description,
            code_tokens: textprep::preprocess(&advisory.code_tokens.join(" ")),
            reference_keywords: textprep::preprocess(&advisory.reference_keywords.join(" ")),
        }
    }
}

/// f11–f19: three TF-IDF vectorizers fitted on the candidates' message,
/// changed-file, and diff token corpora; cosine similarity of each candidate
/// against the description, code-token, and reference-keyword queries.
pub fn lexical_similarities(
    advisory: &AdvisoryRecord,
    candidates: &[CommitRecord],
    cfg: &PipelineConfig,
) -> Vec<[f64; 9]> {
    let queries = LexicalQueries::build(advisory, cfg);

    let messages: Vec<&TokenList> = candidates.iter().map(|c| &c.pre_message).collect();
    let files: Vec<&TokenList> = candidates.iter().map(|c| &c.pre_files).collect();
    let diffs: Vec<&TokenList> = candidates.iter().map(|c| &c.pre_diff).collect();

    let msg_sims = tfidf::corpus_similarities(
        &messages,
        &[&queries.description_with_fix_words, &queries.code_tokens, &queries.reference_keywords],
    );
    let file_sims = tfidf::corpus_similarities(
        &files,
        &[&queries.description, &queries.code_tokens, &queries.reference_keywords],
    );
    let diff_sims = tfidf::corpus_similarities(
        &diffs,
        &[&queries.description, &queries.code_tokens, &queries.reference_keywords],
    );

    (0..candidates.len())
        .map(|i| {
            [
                msg_sims[i][0], msg_sims[i][1], msg_sims[i][2],
                file_sims[i][0], file_sims[i][1], file_sims[i][2],
                diff_sims[i][0], diff_sims[i][1], diff_sims[i][2],
            ]
        })
        .collect()
}

/// f20/f21: rank-linear distance to the publication instant. Among the
/// commits before publication the oldest scores 0.5 and the newest 1.0;
/// among commits at or after publication the closest scores 1.0 falling to
/// 0.5 for the farthest. Timestamps must be ascending.
pub fn time_distance_features(
    timestamps: &[DateTime<Utc>],
    published: DateTime<Utc>,
) -> Vec<(f64, f64)> {
    let k = timestamps.partition_point(|t| *t < published);
    let m = timestamps.len() - k;
    timestamps
        .iter()
        .enumerate()
        .map(|(idx, _)| {
            if idx < k {
                let score = if k == 1 {
                    1.0
                } else {
                    0.5 + 0.5 * idx as f64 / (k - 1) as f64
                };
                (score, 0.0)
            } else {
                let j = idx - k;
                let score = if m == 1 {
                    1.0
                } else {
                    1.0 - 0.5 * j as f64 / (m - 1) as f64
                };
                (0.0, score)
            }
        })
        .collect()
}

/// Reachability anchors for one advisory: the tag mapped from each mentioned
/// version, advanced to the chronologically next same-major tag, with the
/// full set of commits reachable from it.
#[derive(Debug, Clone, Default)]
pub struct ReachabilityContext {
    anchors: Vec<Anchor>,
    window_days: i64,
    decay_per_day: f64,
}

#[derive(Debug, Clone)]
struct Anchor {
    timestamp: DateTime<Utc>,
    reachable: BTreeSet<String>,
}

impl ReachabilityContext {
    /// Maps every advisory version onto its anchor tag and materializes the
    /// anchors' ancestor sets. Versions without a matching tag are skipped.
    pub fn build(
        advisory: &AdvisoryRecord,
        tree: &TagTree,
        repo: &Repo,
        cfg: &PipelineConfig,
    ) -> Result<Self, RepoError> {
        let mut seen = BTreeSet::new();
        let mut anchors = Vec::new();
        for version in &advisory.versions {
            let Some((_, anchor)) = map_version_to_tag(version, tree) else {
                continue;
            };
            if !seen.insert(anchor.name.clone()) {
                continue;
            }
            anchors.push(Anchor {
                timestamp: anchor.timestamp,
                reachable: repo.ancestor_set(&anchor.target_commit)?,
            });
        }
        Ok(Self {
            anchors,
            window_days: cfg.reachability_window_days,
            decay_per_day: cfg.reachability_decay_per_day,
        })
    }

    /// f22 for one commit: the best anchor score, where a reachable commit
    /// within the window scores `1 - decay * days` and everything else 0.
    pub fn score(&self, commit_id: &str, commit_ts: DateTime<Utc>) -> f64 {
        let mut best: f64 = 0.0;
        for anchor in &self.anchors {
            if !anchor.reachable.contains(commit_id) {
                continue;
            }
            let days = (commit_ts - anchor.timestamp).num_seconds().abs() / 86_400;
            if days <= self.window_days {
                best = best.max(1.0 - self.decay_per_day * days as f64);
            }
        }
        best
    }
}

/// One-off reachability score for a single commit.
pub fn reachability_score(
    commit: &CommitRecord,
    advisory: &AdvisoryRecord,
    tree: &TagTree,
    repo: &Repo,
    cfg: &PipelineConfig,
) -> Result<f64, RepoError> {
    let ctx = ReachabilityContext::build(advisory, tree, repo, cfg)?;
    Ok(ctx.score(&commit.id, commit.timestamp))
}

/// Builds the full feature matrix: one row per candidate, columns in
/// [`FEATURE_NAMES`] order. Candidates may arrive in any order; time
/// features are computed over the (timestamp, id)-sorted view.
pub fn assemble(
    advisory: &AdvisoryRecord,
    candidates: &[CommitRecord],
    reachability: &ReachabilityContext,
    cfg: &PipelineConfig,
) -> Vec<FeatureVector> {
    if candidates.is_empty() {
        return Vec::new();
    }

    let mut order: Vec<usize> = (0..candidates.len()).collect();
    order.sort_by(|&a, &b| {
        candidates[a]
            .timestamp
            .cmp(&candidates[b].timestamp)
            .then_with(|| candidates[a].id.cmp(&candidates[b].id))
    });
    let sorted_ts: Vec<DateTime<Utc>> = order.iter().map(|&i| candidates[i].timestamp).collect();
    let time_sorted = time_distance_features(&sorted_ts, advisory.raw.published);
    let mut time_by_candidate = vec![(0.0, 0.0); candidates.len()];
    for (pos, &idx) in order.iter().enumerate() {
        time_by_candidate[idx] = time_sorted[pos];
    }

    let lexical = lexical_similarities(advisory, candidates, cfg);
    let published_epoch = advisory.raw.published.timestamp() as f64;

    candidates
        .iter()
        .enumerate()
        .map(|(i, commit)| {
            let mut row = [0.0; FEATURE_COUNT];
            let (f1, f2) = id_features(&advisory.raw.cve_id, &commit.message);
            let (f3, f4) = referred_features(advisory, &commit.id, cfg.commit_prefix_len);
            let (f8, f9) = message_ref_flags(&commit.message);
            row[col::VULN_ID_IN_MESSAGE] = f1;
            row[col::OTHER_VULN_ID_IN_MESSAGE] = f2;
            row[col::REFERRED_BY_NVD] = f3;
            row[col::REFERRED_BY_ADVISORIES] = f4;
            row[col::N_HUNKS] = commit.n_hunks as f64;
            row[col::AVG_HUNK_SIZE] = commit.avg_hunk_size;
            row[col::N_CHANGED_FILES] = commit.changed_files.len() as f64;
            row[col::HAS_GITHUB_ISSUE_REF] = f8;
            row[col::HAS_JIRA_REF] = f9;
            row[col::PATH_SIMILARITY] = path_similarity(&advisory.paths, &commit.changed_files);
            row[col::MSG_SIM_DESCRIPTION..=col::DIFF_SIM_REF_KEYWORDS]
                .copy_from_slice(&lexical[i]);
            row[col::TIME_DISTANCE_BEFORE] = time_by_candidate[i].0;
            row[col::TIME_DISTANCE_AFTER] = time_by_candidate[i].1;
            row[col::REACHABILITY] = reachability.score(&commit.id, commit.timestamp);
            row[col::VULN_TIMESTAMP] = published_epoch;
            FeatureVector(row)
        })
        .collect()
}

/// Columns min-max scaled with bounds fitted once on training data.
pub const UNIVERSAL_COLUMNS: [usize; 4] = [
    col::N_HUNKS,
    col::AVG_HUNK_SIZE,
    col::N_CHANGED_FILES,
    col::VULN_TIMESTAMP,
];

/// Columns min-max scaled per advisory, over its own candidate rows.
pub const PER_ADVISORY_COLUMNS: [usize; 10] = [
    col::PATH_SIMILARITY,
    col::MSG_SIM_DESCRIPTION,
    col::MSG_SIM_CODE_TOKENS,
    col::MSG_SIM_REF_KEYWORDS,
    col::FILES_SIM_DESCRIPTION,
    col::FILES_SIM_CODE_TOKENS,
    col::FILES_SIM_REF_KEYWORDS,
    col::DIFF_SIM_DESCRIPTION,
    col::DIFF_SIM_CODE_TOKENS,
    col::DIFF_SIM_REF_KEYWORDS,
];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MinMax {
    pub min: f64,
    pub max: f64,
}

/// Min/max bounds for the universal columns, fitted on training data and
/// shipped inside the model document.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct UniversalScaler {
    pub bounds: BTreeMap<String, MinMax>,
}

impl UniversalScaler {
    /// Fits bounds for the universal columns over all training rows.
    pub fn fit<'a>(rows: impl IntoIterator<Item = &'a FeatureVector>) -> Self {
        let mut bounds: BTreeMap<String, MinMax> = UNIVERSAL_COLUMNS
            .iter()
            .map(|&c| {
                (
                    FEATURE_NAMES[c].to_string(),
                    MinMax {
                        min: f64::INFINITY,
                        max: f64::NEG_INFINITY,
                    },
                )
            })
            .collect();
        let mut any = false;
        for row in rows {
            any = true;
            for &c in &UNIVERSAL_COLUMNS {
                let b = bounds.get_mut(FEATURE_NAMES[c]).expect("bound present");
                b.min = b.min.min(row.0[c]);
                b.max = b.max.max(row.0[c]);
            }
        }
        if !any {
            bounds.clear();
        }
        Self { bounds }
    }
}

fn scale_value(v: f64, min: f64, max: f64) -> f64 {
    if max <= min {
        0.0
    } else {
        ((v - min) / (max - min)).clamp(0.0, 1.0)
    }
}

/// Applies the combined scaling scheme in place: universal columns use the
/// fitted bounds (values past them clamp to [0, 1]), per-advisory columns
/// are fitted over this matrix's own rows, everything else is untouched.
pub fn scale_matrix(
    matrix: &mut [FeatureVector],
    scaler: &UniversalScaler,
) -> Result<(), FeatureError> {
    if matrix.is_empty() {
        return Ok(());
    }
    for &c in &UNIVERSAL_COLUMNS {
        let b = scaler
            .bounds
            .get(FEATURE_NAMES[c])
            .ok_or_else(|| FeatureError::UnfittedScaler(FEATURE_NAMES[c].to_string()))?;
        for row in matrix.iter_mut() {
            row.0[c] = scale_value(row.0[c], b.min, b.max);
        }
    }
    for &c in &PER_ADVISORY_COLUMNS {
        let min = matrix.iter().map(|r| r.0[c]).fold(f64::INFINITY, f64::min);
        let max = matrix.iter().map(|r| r.0[c]).fold(f64::NEG_INFINITY, f64::max);
        for row in matrix.iter_mut() {
            row.0[c] = scale_value(row.0[c], min, max);
        }
    }
    Ok(())
}
