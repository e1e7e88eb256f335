//! Reduces a repository's full commit list to candidate fix commits for one
//! advisory: a publication-date window with commit-count caps, followed by a
//! changed-file extension filter.

use chrono::{DateTime, Duration, Utc};
use serde::{Deserialize, Serialize};

/// File extensions that mark a commit as touching code, in the default
/// configuration. Lowercase, no dots.
pub const DEFAULT_RELEVANT_EXTENSIONS: &[&str] = &[
    "java", "c", "cpp", "h", "py", "js", "xml", "go", "rb", "php", "sh", "scale", "lua", "m",
    "pl", "ts", "swift", "sql", "groovy", "erl", "swf", "vue", "bat", "s", "ejs", "yaml", "yml",
    "jar",
];

/// Candidate-selection parameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FilterConfig {
    /// Window size before the publication date, in days.
    pub days_before: i64,
    /// Window size after the publication date, in days.
    pub days_after: i64,
    /// Maximum commits kept before the publication date.
    pub cap_before: usize,
    /// Maximum commits kept at or after the publication date.
    pub cap_after: usize,
    pub relevant_extensions: Vec<String>,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            days_before: 730,
            days_after: 100,
            cap_before: 5215,
            cap_after: 100,
            relevant_extensions: DEFAULT_RELEVANT_EXTENSIONS
                .iter()
                .map(|s| s.to_string())
                .collect(),
        }
    }
}

/// Commits surviving the filter phase for one advisory, with per-stage counts.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CandidateSet {
    pub advisory_id: String,
    pub commit_ids: Vec<String>,
    pub stats: FilterStats,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct FilterStats {
    pub total_commits: usize,
    pub after_time_window: usize,
    pub after_extension_filter: usize,
}

/// Keeps commits inside the publication-date window, capped to the
/// `cap_before` closest commits before publication and the `cap_after`
/// closest at or after it. Input must be sorted ascending by timestamp;
/// output stays ascending. Both window boundaries are inclusive.
pub fn select_window(
    commits: &[(String, DateTime<Utc>)],
    published: DateTime<Utc>,
    cfg: &FilterConfig,
) -> Vec<(String, DateTime<Utc>)> {
    let lo = published - Duration::days(cfg.days_before);
    let hi = published + Duration::days(cfg.days_after);

    let in_window: Vec<&(String, DateTime<Utc>)> = commits
        .iter()
        .filter(|(_, t)| *t >= lo && *t <= hi)
        .collect();

    let split = in_window.partition_point(|(_, t)| *t < published);
    let (before, after) = in_window.split_at(split);

    // closest to publication: the tail of `before`, the head of `after`
    let before_kept = &before[before.len().saturating_sub(cfg.cap_before)..];
    let after_kept = &after[..cfg.cap_after.min(after.len())];

    before_kept
        .iter()
        .chain(after_kept.iter())
        .map(|c| (*c).clone())
        .collect()
}

/// Keeps a commit iff any changed filename has a relevant extension: split
/// the basename on dots and look up the lowercased last segment. Filenames
/// without a dot never match.
pub fn filter_extensions<'a, F>(
    candidates: &'a [String],
    mut changed_files: F,
    cfg: &FilterConfig,
) -> Vec<String>
where
    F: FnMut(&'a str) -> Vec<String>,
{
    candidates
        .iter()
        .filter(|id| {
            changed_files(id)
                .iter()
                .any(|path| has_relevant_extension(path, &cfg.relevant_extensions))
        })
        .cloned()
        .collect()
}

/// True when the path's basename, split on dots, ends in one of `extensions`.
pub fn has_relevant_extension(path: &str, extensions: &[String]) -> bool {
    let basename = path.rsplit('/').next().unwrap_or(path);
    let mut segments = basename.split('.');
    let last = segments.next_back().unwrap_or("");
    if segments.next().is_none() {
        return false; // no dot in the filename
    }
    let last = last.to_lowercase();
    extensions.iter().any(|e| *e == last)
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::TimeZone;
    use proptest::prelude::*;

    fn ts(s: &str) -> DateTime<Utc> {
        DateTime::parse_from_rfc3339(s).unwrap().with_timezone(&Utc)
    }

    fn commit(n: usize, t: DateTime<Utc>) -> (String, DateTime<Utc>) {
        (format!("{n:040x}"), t)
    }

    #[test]
    fn window_excludes_distant_commits() {
        let published = ts("2020-06-01T00:00:00Z");
        let commits = vec![
            commit(1, published - Duration::days(3 * 365)),
            commit(2, published - Duration::days(10)),
            commit(3, published + Duration::days(50)),
            commit(4, published + Duration::days(150)),
        ];
        let kept = select_window(&commits, published, &FilterConfig::default());
        let ids: Vec<_> = kept.iter().map(|(id, _)| id.clone()).collect();
        assert_eq!(ids, vec![commits[1].0.clone(), commits[2].0.clone()]);
    }

    #[test]
    fn window_boundaries_inclusive() {
        let published = ts("2020-06-01T00:00:00Z");
        let cfg = FilterConfig::default();
        let commits = vec![
            commit(1, published - Duration::days(cfg.days_before)),
            commit(2, published + Duration::days(cfg.days_after)),
        ];
        assert_eq!(select_window(&commits, published, &cfg).len(), 2);
    }

    #[test]
    fn caps_keep_the_closest() {
        let published = ts("2020-06-01T00:00:00Z");
        let cfg = FilterConfig {
            cap_before: 3,
            cap_after: 2,
            ..FilterConfig::default()
        };
        let commits: Vec<_> = (0..6)
            .map(|i| commit(i, published - Duration::days(60 - 10 * i as i64)))
            .collect();
        // timestamps: -60,-50,-40,-30,-20,-10 days; all before publication
        let kept = select_window(&commits, published, &cfg);
        let ids: Vec<_> = kept.iter().map(|(id, _)| id.clone()).collect();
        assert_eq!(
            ids,
            vec![commits[3].0.clone(), commits[4].0.clone(), commits[5].0.clone()]
        );

        let after: Vec<_> = (0..4)
            .map(|i| commit(i, published + Duration::days(10 * (i as i64 + 1))))
            .collect();
        let kept = select_window(&after, published, &cfg);
        assert_eq!(kept.len(), 2);
        assert_eq!(kept[0].0, after[0].0);
        assert_eq!(kept[1].0, after[1].0);
    }

    #[test]
    fn extension_filter_rules() {
        let cfg = FilterConfig::default();
        assert!(!has_relevant_extension("README.md", &cfg.relevant_extensions));
        assert!(has_relevant_extension("src/Main.java", &cfg.relevant_extensions));
        assert!(!has_relevant_extension("archive.tar.gz", &cfg.relevant_extensions));
        assert!(has_relevant_extension("run.sh", &cfg.relevant_extensions));
        assert!(!has_relevant_extension("Makefile", &cfg.relevant_extensions));
        assert!(has_relevant_extension("X.JAVA", &cfg.relevant_extensions));
        assert!(!has_relevant_extension("v1.2/Makefile", &cfg.relevant_extensions));
    }

    #[test]
    fn filter_extensions_any_of() {
        let cfg = FilterConfig::default();
        let candidates = vec!["a".to_string(), "b".to_string()];
        let kept = filter_extensions(
            &candidates,
            |id| match id {
                "a" => vec!["archive.tar.gz".into(), "run.sh".into()],
                _ => vec!["README.md".into()],
            },
            &cfg,
        );
        assert_eq!(kept, vec!["a".to_string()]);
    }

    #[test]
    fn default_extension_list_shape() {
        let cfg = FilterConfig::default();
        assert_eq!(cfg.relevant_extensions.len(), 28);
        for ext in &cfg.relevant_extensions {
            assert_eq!(*ext, ext.to_lowercase());
            assert!(!ext.contains('.'));
        }
    }

    proptest! {
        #[test]
        fn window_size_bounded_by_caps(
            offsets in proptest::collection::vec(-800i64..200, 0..400),
            cap_before in 1usize..50,
            cap_after in 1usize..20,
        ) {
            let published = Utc.with_ymd_and_hms(2021, 1, 1, 0, 0, 0).unwrap();
            let mut commits: Vec<_> = offsets
                .iter()
                .enumerate()
                .map(|(i, d)| commit(i, published + Duration::days(*d)))
                .collect();
            commits.sort_by(|a, b| a.1.cmp(&b.1).then(a.0.cmp(&b.0)));
            let cfg = FilterConfig { cap_before, cap_after, ..FilterConfig::default() };
            let kept = select_window(&commits, published, &cfg);
            prop_assert!(kept.len() <= cap_before + cap_after);
            for w in kept.windows(2) {
                prop_assert!(w[0].1 <= w[1].1);
            }
        }

        #[test]
        fn enlarging_before_never_drops(
            offsets in proptest::collection::vec(-800i64..0, 1..200),
            cap in 1usize..40,
        ) {
            let published = Utc.with_ymd_and_hms(2021, 1, 1, 0, 0, 0).unwrap();
            let mut commits: Vec<_> = offsets
                .iter()
                .enumerate()
                .map(|(i, d)| commit(i, published + Duration::days(*d)))
                .collect();
            commits.sort_by(|a, b| a.1.cmp(&b.1).then(a.0.cmp(&b.0)));
            let narrow = FilterConfig { cap_before: cap, ..FilterConfig::default() };
            let wide = FilterConfig {
                cap_before: cap + 10,
                days_before: narrow.days_before + 100,
                ..FilterConfig::default()
            };
            let narrow_ids: Vec<_> = select_window(&commits, published, &narrow)
                .into_iter()
                .map(|(id, _)| id)
                .collect();
            let wide_ids: Vec<_> = select_window(&commits, published, &wide)
                .into_iter()
                .map(|(id, _)| id)
                .collect();
            for id in narrow_ids {
                prop_assert!(wide_ids.contains(&id));
            }
        }
    }
}
