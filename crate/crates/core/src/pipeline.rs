//! End-to-end orchestration: load an advisory, mine and filter a repository,
//! assemble feature rows, and rank — with the commit store in the loop so
//! repositories shared by several advisories are mined once.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::advisory::{AdvisoryError, AdvisoryRecord};
use crate::evaluator::{BaselineEntry, EvalError};
use crate::features::{
    self, assemble, FeatureError, PipelineConfig, ReachabilityContext, UniversalScaler,
};
use crate::filter::{self, CandidateSet, FilterConfig, FilterStats};
use crate::ranker::{
    self, AdvisoryCandidates, CandidateRow, ModelDocument, ModelKind, RankError, RankedList,
    TrainingSet,
};
use crate::repominer::{build_tag_tree, CommitRecord, ExtractOptions, Repo, RepoError};
use crate::store::{CacheKey, Store, StoreError};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("advisory: {0}")]
    Advisory(#[from] AdvisoryError),
    #[error("repominer: {0}")]
    Repo(#[from] RepoError),
    #[error("store: {0}")]
    Store(#[from] StoreError),
    #[error("features: {0}")]
    Feature(#[from] FeatureError),
    #[error("ranker: {0}")]
    Rank(#[from] RankError),
    #[error("evaluator: {0}")]
    Eval(#[from] EvalError),
    #[error("dataset: {0}")]
    Dataset(String),
}

/// How many commits were mined fresh versus served from the store.
#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
pub struct MiningStats {
    pub extracted: usize,
    pub cache_hits: usize,
}

impl MiningStats {
    pub fn total(&self) -> usize {
        self.extracted + self.cache_hits
    }

    /// Fraction of lookups answered without touching the repository.
    pub fn hit_ratio(&self) -> f64 {
        if self.total() == 0 {
            0.0
        } else {
            self.cache_hits as f64 / self.total() as f64
        }
    }

    fn absorb(&mut self, other: MiningStats) {
        self.extracted += other.extracted;
        self.cache_hits += other.cache_hits;
    }
}

/// Fetches commit records through the store when one is given. Cache hits
/// never touch the repository.
pub struct CommitFetcher<'a> {
    repo: &'a Repo,
    store: Option<&'a Store>,
    fingerprint: Option<String>,
    opts: ExtractOptions,
    pub stats: MiningStats,
}

impl<'a> CommitFetcher<'a> {
    pub fn new(repo: &'a Repo, store: Option<&'a Store>, opts: ExtractOptions) -> Self {
        let fingerprint = store.map(|_| crate::store::repo_fingerprint(repo));
        Self {
            repo,
            store,
            fingerprint,
            opts,
            stats: MiningStats::default(),
        }
    }

    pub fn fetch(&mut self, id: &str) -> Result<CommitRecord, PipelineError> {
        if let (Some(store), Some(fp)) = (self.store, self.fingerprint.as_deref()) {
            let key = CacheKey::new(fp, id);
            if let Some(record) = store.get(&key)? {
                self.stats.cache_hits += 1;
                return Ok(record);
            }
            let record = self.repo.extract_commit(id, &self.opts)?;
            store.put(&key, &record)?;
            self.stats.extracted += 1;
            Ok(record)
        } else {
            let record = self.repo.extract_commit(id, &self.opts)?;
            self.stats.extracted += 1;
            Ok(record)
        }
    }
}

/// Runs the filter phase for one advisory and mines the surviving commits.
/// Returned records follow the candidate order (ascending timestamp).
pub fn collect_candidates(
    advisory: &AdvisoryRecord,
    repo: &Repo,
    fetcher: &mut CommitFetcher,
    filter_cfg: &FilterConfig,
) -> Result<(CandidateSet, Vec<CommitRecord>), PipelineError> {
    let commits = repo.list_commits()?;
    let total_commits = commits.len();
    let windowed = filter::select_window(&commits, advisory.raw.published, filter_cfg);
    let after_time_window = windowed.len();

    let mut by_id: BTreeMap<String, CommitRecord> = BTreeMap::new();
    let ids: Vec<String> = windowed.iter().map(|(id, _)| id.clone()).collect();
    for id in &ids {
        by_id.insert(id.clone(), fetcher.fetch(id)?);
    }
    let kept_ids = filter::filter_extensions(
        &ids,
        |id| by_id.get(id).map(|r| r.changed_files.clone()).unwrap_or_default(),
        filter_cfg,
    );
    let records: Vec<CommitRecord> = kept_ids
        .iter()
        .map(|id| by_id.remove(id).expect("kept ids came from the map"))
        .collect();

    let set = CandidateSet {
        advisory_id: advisory.raw.cve_id.clone(),
        stats: FilterStats {
            total_commits,
            after_time_window,
            after_extension_filter: kept_ids.len(),
        },
        commit_ids: kept_ids,
    };
    Ok((set, records))
}

/// Assembles raw (unscaled) feature rows for mined candidates.
pub fn feature_rows(
    advisory: &AdvisoryRecord,
    records: &[CommitRecord],
    repo: &Repo,
    pipe_cfg: &PipelineConfig,
) -> Result<Vec<CandidateRow>, PipelineError> {
    let tree = build_tag_tree(repo.list_tags()?);
    let reachability = ReachabilityContext::build(advisory, &tree, repo, pipe_cfg)?;
    let matrix = assemble(advisory, records, &reachability, pipe_cfg);
    Ok(records
        .iter()
        .zip(matrix)
        .map(|(record, features)| CandidateRow {
            commit_id: record.id.clone(),
            features,
        })
        .collect())
}

/// Outcome of ranking one advisory against one repository.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RankRun {
    pub ranked: RankedList,
    pub stats: FilterStats,
    pub mining: MiningStats,
}

/// The full rank pipeline: filter, mine, featurize, scale with the model's
/// shipped universal bounds, predict, sort.
pub fn rank_advisory(
    advisory: &AdvisoryRecord,
    repo: &Repo,
    store: Option<&Store>,
    model: &ModelDocument,
    filter_cfg: &FilterConfig,
    pipe_cfg: &PipelineConfig,
) -> Result<RankRun, PipelineError> {
    let mut fetcher = CommitFetcher::new(repo, store, extract_options(pipe_cfg));
    let (set, records) = collect_candidates(advisory, repo, &mut fetcher, filter_cfg)?;
    let mut rows = feature_rows(advisory, &records, repo, pipe_cfg)?;
    let mut matrix: Vec<features::FeatureVector> = rows.iter().map(|r| r.features).collect();
    features::scale_matrix(&mut matrix, &model.scaling)?;
    for (row, features) in rows.iter_mut().zip(matrix) {
        row.features = features;
    }
    let ranked = ranker::rank(&model.model, &advisory.raw.cve_id, &rows)?;
    Ok(RankRun {
        ranked,
        stats: set.stats,
        mining: fetcher.stats,
    })
}

pub fn extract_options(pipe_cfg: &PipelineConfig) -> ExtractOptions {
    ExtractOptions {
        context_lines: pipe_cfg.diff_context_lines,
        diff_line_limit: pipe_cfg.diff_line_limit,
    }
}

/// Loads and distills an advisory from a local JSON file, scraping its
/// references through the given fetcher.
pub fn load_advisory_from_file(
    path: &Path,
    fetcher: &dyn crate::advisory::ReferenceFetcher,
    filter_cfg: &FilterConfig,
    pipe_cfg: &PipelineConfig,
) -> Result<AdvisoryRecord, PipelineError> {
    let raw = crate::advisory::load_raw_advisory(
        &crate::advisory::AdvisorySource::File(path.to_path_buf()),
        fetcher,
    )?;
    let (record, report) = crate::advisory::distill(
        raw,
        fetcher,
        &filter_cfg.relevant_extensions,
        pipe_cfg.top_k_reference_words,
    );
    for failure in &report.failures {
        log::warn!("reference fetch failed for {}: {}", failure.url, failure.reason);
    }
    Ok(record)
}

/// One labeled dataset line: an advisory, the repository it belongs to, and
/// its known fix commits.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetEntry {
    pub cve_id: String,
    pub repo_path: PathBuf,
    pub fix_ids: BTreeSet<String>,
}

/// Parses the tab-separated dataset format:
/// `cve_id <TAB> repo_path <TAB> comma-separated fix ids`. Relative repo
/// paths resolve against `base`. Blank lines and `#` comments are skipped.
pub fn parse_dataset(text: &str, base: &Path) -> Result<Vec<DatasetEntry>, PipelineError> {
    let mut entries = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(PipelineError::Dataset(format!(
                "line {}: expected 3 tab-separated fields, got {}",
                lineno + 1,
                fields.len()
            )));
        }
        let repo_path = {
            let p = PathBuf::from(fields[1]);
            if p.is_absolute() {
                p
            } else {
                base.join(p)
            }
        };
        let fix_ids: BTreeSet<String> = fields[2]
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(str::to_string)
            .collect();
        if fix_ids.is_empty() {
            return Err(PipelineError::Dataset(format!(
                "line {}: no fix commit ids",
                lineno + 1
            )));
        }
        entries.push(DatasetEntry {
            cve_id: fields[0].to_string(),
            repo_path,
            fix_ids,
        });
    }
    Ok(entries)
}

pub fn format_dataset(entries: &[DatasetEntry]) -> String {
    let mut out = String::new();
    for e in entries {
        let fixes: Vec<&str> = e.fix_ids.iter().map(String::as_str).collect();
        out.push_str(&format!(
            "{}\t{}\t{}\n",
            e.cve_id,
            e.repo_path.display(),
            fixes.join(",")
        ));
    }
    out
}

/// A dataset turned into rankable form: raw candidate feature rows plus the
/// inputs the baseline needs.
#[derive(Debug, Default)]
pub struct PreparedDataset {
    pub candidates: Vec<AdvisoryCandidates>,
    pub baseline: Vec<BaselineEntry>,
    pub per_advisory_stats: Vec<(String, FilterStats)>,
    pub mining: MiningStats,
}

/// Mines and featurizes every dataset entry. `load_advisory` maps a dataset
/// entry to its advisory record (the CLI reads JSON files; tests build them
/// directly). Repositories are opened once per path.
pub fn prepare_dataset(
    entries: &[DatasetEntry],
    mut load_advisory: impl FnMut(&DatasetEntry) -> Result<AdvisoryRecord, PipelineError>,
    store: Option<&Store>,
    filter_cfg: &FilterConfig,
    pipe_cfg: &PipelineConfig,
) -> Result<PreparedDataset, PipelineError> {
    let mut repos: BTreeMap<PathBuf, Repo> = BTreeMap::new();
    let mut out = PreparedDataset::default();

    for entry in entries {
        let advisory = load_advisory(entry)?;
        if !repos.contains_key(&entry.repo_path) {
            repos.insert(entry.repo_path.clone(), Repo::open(&entry.repo_path)?);
        }
        let repo = &repos[&entry.repo_path];
        let mut fetcher = CommitFetcher::new(repo, store, extract_options(pipe_cfg));

        let (set, records) = collect_candidates(&advisory, repo, &mut fetcher, filter_cfg)?;
        let rows = feature_rows(&advisory, &records, repo, pipe_cfg)?;

        let mut fix_messages = BTreeMap::new();
        for fix in &entry.fix_ids {
            match fetcher.fetch(fix) {
                Ok(record) => {
                    fix_messages.insert(fix.clone(), record.message);
                }
                Err(PipelineError::Repo(RepoError::UnknownCommit(_))) => {
                    log::warn!("{}: fix commit {fix} not in repository", entry.cve_id);
                }
                Err(e) => return Err(e),
            }
        }

        out.baseline.push(BaselineEntry {
            cve_id: entry.cve_id.clone(),
            fixes: entry.fix_ids.clone(),
            nvd_commit_prefixes: advisory.nvd_commit_prefixes.clone(),
            fix_messages,
        });
        out.per_advisory_stats.push((entry.cve_id.clone(), set.stats));
        out.candidates.push(AdvisoryCandidates {
            advisory_id: entry.cve_id.clone(),
            rows,
            fixes: entry.fix_ids.clone(),
        });
        out.mining.absorb(fetcher.stats);
    }
    Ok(out)
}

/// Fits the universal scaler on the whole dataset, scales it, builds the
/// one-positive/one-negative training set, and trains a model of `kind`.
pub fn train_model(
    dataset: &[AdvisoryCandidates],
    kind: ModelKind,
    seed: u64,
) -> Result<(ModelDocument, TrainingSet), PipelineError> {
    let scaler = UniversalScaler::fit(dataset.iter().flat_map(|a| a.rows.iter().map(|r| &r.features)));
    let scaled = crate::evaluator::scale_dataset(dataset, &scaler)?;
    let training_set = ranker::build_training_set(&scaled, seed);
    let model = ranker::train(&training_set, kind)?;
    Ok((ModelDocument::new(model, scaler), training_set))
}

/// Mines every commit of a repository into the store.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct IngestReport {
    pub total_commits: usize,
    pub extracted: usize,
    pub cache_hits: usize,
}

pub fn ingest_repo(
    repo: &Repo,
    store: &Store,
    pipe_cfg: &PipelineConfig,
) -> Result<IngestReport, PipelineError> {
    let commits = repo.list_commits()?;
    let mut fetcher = CommitFetcher::new(repo, Some(store), extract_options(pipe_cfg));
    for (id, _) in &commits {
        fetcher.fetch(id)?;
    }
    Ok(IngestReport {
        total_commits: commits.len(),
        extracted: fetcher.stats.extracted,
        cache_hits: fetcher.stats.cache_hits,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::advisory::RawAdvisory;
    use crate::synth::{day, RepoBuilder};
    use chrono::{DateTime, Utc};

    fn advisory(description: &str, published: DateTime<Utc>) -> AdvisoryRecord {
        AdvisoryRecord {
            raw: RawAdvisory {
                cve_id: "CVE-2020-7777".into(),
                description: description.into(),
                published,
                reference_urls: vec![],
            },
            versions: crate::advisory::extract_versions(description),
            paths: crate::advisory::extract_paths(description),
            code_tokens: crate::advisory::extract_code_tokens(description),
            nvd_commit_prefixes: BTreeSet::new(),
            advisory_commit_prefixes: BTreeSet::new(),
            reference_keywords: vec![],
        }
    }

    #[test]
    fn candidates_respect_extension_filter() {
        let tmp = tempfile::tempdir().unwrap();
        let repo_dir = tmp.path().join("repo");
        let builder = RepoBuilder::init(&repo_dir);
        builder.commit(day(2020, 1, 1), "code", &[("a.py", "x\n")]);
        builder.commit(day(2020, 1, 2), "docs only", &[("README.md", "hi\n")]);
        builder.commit(day(2020, 1, 3), "more code", &[("b.java", "y\n")]);

        let repo = Repo::open(&repo_dir).unwrap();
        let adv = advisory("an overflow", day(2020, 2, 1));
        let mut fetcher = CommitFetcher::new(&repo, None, ExtractOptions::default());
        let (set, records) =
            collect_candidates(&adv, &repo, &mut fetcher, &FilterConfig::default()).unwrap();
        assert_eq!(set.stats.total_commits, 3);
        assert_eq!(set.stats.after_time_window, 3);
        assert_eq!(set.stats.after_extension_filter, 2);
        assert_eq!(records.len(), 2);
        assert!(records.iter().all(|r| r.changed_files[0] != "README.md"));
    }

    #[test]
    fn cache_hits_bypass_the_repository() {
        let tmp = tempfile::tempdir().unwrap();
        let repo_dir = tmp.path().join("repo");
        let builder = RepoBuilder::init(&repo_dir);
        for i in 0..4 {
            builder.commit(day(2020, 1, 1 + i), "work", &[("a.py", &format!("{i}\n"))]);
        }
        let store = Store::open(tmp.path().join("store")).unwrap();
        let repo = Repo::open(&repo_dir).unwrap();
        let report = ingest_repo(&repo, &store, &PipelineConfig::default()).unwrap();
        assert_eq!(report.extracted, 4);
        assert_eq!(report.cache_hits, 0);

        // move the git directory away: cached reads must not notice
        let fingerprint = crate::store::repo_fingerprint(&repo);
        let ids: Vec<String> = repo.list_commits().unwrap().into_iter().map(|(id, _)| id).collect();
        std::fs::rename(repo_dir.join(".git"), tmp.path().join("gone")).unwrap();

        let mut fetcher = CommitFetcher::new(&repo, Some(&store), ExtractOptions::default());
        fetcher.fingerprint = Some(fingerprint);
        for id in &ids {
            fetcher.fetch(id).unwrap();
        }
        assert_eq!(fetcher.stats.cache_hits, 4);
        assert_eq!(fetcher.stats.extracted, 0);
    }

    #[test]
    fn second_ingest_is_all_cache_hits() {
        let tmp = tempfile::tempdir().unwrap();
        let repo_dir = tmp.path().join("repo");
        let builder = RepoBuilder::init(&repo_dir);
        for i in 0..5 {
            builder.commit(day(2020, 2, 1 + i), "work", &[("a.py", &format!("{i}\n"))]);
        }
        let store = Store::open(tmp.path().join("store")).unwrap();
        let repo = Repo::open(&repo_dir).unwrap();
        ingest_repo(&repo, &store, &PipelineConfig::default()).unwrap();
        let second = ingest_repo(&repo, &store, &PipelineConfig::default()).unwrap();
        assert_eq!(second.cache_hits, 5);
        assert_eq!(second.extracted, 0);
    }

    #[test]
    fn cached_and_uncached_runs_rank_identically() {
        let tmp = tempfile::tempdir().unwrap();
        let repo_dir = tmp.path().join("repo");
        let builder = RepoBuilder::init(&repo_dir);
        builder.commit(day(2020, 3, 1), "setup", &[("core.py", "a\n")]);
        let fix = builder.commit(
            day(2020, 3, 10),
            "fix CVE-2020-7777 in core.py",
            &[("core.py", "b\n")],
        );
        builder.commit(day(2020, 3, 20), "unrelated", &[("other.py", "c\n")]);

        let repo = Repo::open(&repo_dir).unwrap();
        let adv = advisory("issue in core.py", day(2020, 4, 1));
        let dataset_entry = AdvisoryCandidates {
            advisory_id: adv.raw.cve_id.clone(),
            rows: Vec::new(),
            fixes: BTreeSet::from([fix.clone()]),
        };

        // train a tiny model on this repo's own rows
        let mut fetcher = CommitFetcher::new(&repo, None, ExtractOptions::default());
        let (_, records) =
            collect_candidates(&adv, &repo, &mut fetcher, &FilterConfig::default()).unwrap();
        let rows = feature_rows(&adv, &records, &repo, &PipelineConfig::default()).unwrap();
        let dataset = vec![AdvisoryCandidates { rows, ..dataset_entry }];
        let (model, _) = train_model(&dataset, ModelKind::Logistic, 7).unwrap();

        let store = Store::open(tmp.path().join("store")).unwrap();
        let cached = rank_advisory(
            &adv,
            &repo,
            Some(&store),
            &model,
            &FilterConfig::default(),
            &PipelineConfig::default(),
        )
        .unwrap();
        let uncached = rank_advisory(
            &adv,
            &repo,
            None,
            &model,
            &FilterConfig::default(),
            &PipelineConfig::default(),
        )
        .unwrap();
        assert_eq!(
            serde_json::to_string(&cached.ranked).unwrap(),
            serde_json::to_string(&uncached.ranked).unwrap()
        );
        assert_eq!(cached.ranked.entries[0].commit_id, fix);
    }

    #[test]
    fn dataset_parse_roundtrip() {
        let base = Path::new("/data");
        let text = "CVE-2020-1\trepos/a\tabc,def\n# comment\n\nCVE-2020-2\t/abs/b\tffff\n";
        let entries = parse_dataset(text, base).unwrap();
        assert_eq!(entries.len(), 2);
        assert_eq!(entries[0].repo_path, PathBuf::from("/data/repos/a"));
        assert_eq!(entries[0].fix_ids.len(), 2);
        assert_eq!(entries[1].repo_path, PathBuf::from("/abs/b"));

        let formatted = format_dataset(&entries);
        let reparsed = parse_dataset(&formatted, Path::new("/")).unwrap();
        assert_eq!(reparsed, entries);
    }

    #[test]
    fn dataset_rejects_malformed_lines() {
        assert!(parse_dataset("CVE-1\tonly-two-fields", Path::new("/")).is_err());
        assert!(parse_dataset("CVE-1\trepo\t\n", Path::new("/")).is_err());
    }
}
