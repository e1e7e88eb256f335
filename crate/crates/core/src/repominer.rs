//! Mines commits, diffs, hunk statistics, tags, and ancestry facts from a
//! local git clone. Talks to git through its plumbing commands with config
//! isolation so output is byte-stable across runs and environments.

use std::collections::BTreeMap;
use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::OnceLock;

use chrono::{DateTime, Utc};
use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::textprep::{self, TokenList};

#[derive(Debug, Error)]
pub enum RepoError {
    #[error("not a git repository: {0}")]
    NotARepository(PathBuf),
    #[error("repository has no commits")]
    EmptyRepository,
    #[error("unknown commit {0}")]
    UnknownCommit(String),
    #[error("unknown tag {0}")]
    UnknownTag(String),
    #[error("git {context} failed: {message}")]
    Git { context: String, message: String },
}

/// One commit's mined content and preprocessed token variants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommitRecord {
    /// Full 40-char hex id.
    pub id: String,
    /// Committer timestamp.
    pub timestamp: DateTime<Utc>,
    pub message: String,
    pub changed_files: Vec<String>,
    /// Noise-stripped diff lines, truncated to the configured limit.
    pub diff_lines: Vec<String>,
    pub n_hunks: u32,
    /// Changed plus context lines per hunk; 0 when there are no hunks.
    pub avg_hunk_size: f64,
    pub pre_message: TokenList,
    pub pre_files: TokenList,
    pub pre_diff: TokenList,
}

/// A repository tag with its parsed `(major, minor)` core, when present.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tag {
    pub name: String,
    pub timestamp: DateTime<Utc>,
    pub target_commit: String,
    pub parsed_version: Option<ParsedVersion>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParsedVersion {
    pub major: u32,
    pub minor: u32,
    pub qualifier: String,
}

/// Tags grouped by `(major, minor)` branch, each branch sorted ascending by
/// timestamp (ties by name). Unversioned tags are dropped.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TagTree {
    pub branches: BTreeMap<(u32, u32), Vec<Tag>>,
}

/// Diff extraction knobs.
#[derive(Debug, Clone, Copy)]
pub struct ExtractOptions {
    pub context_lines: u32,
    pub diff_line_limit: usize,
}

impl Default for ExtractOptions {
    fn default() -> Self {
        Self {
            context_lines: 1,
            diff_line_limit: 10_000,
        }
    }
}

/// Handle on a local clone (bare or worktree). Read-only.
#[derive(Debug, Clone)]
pub struct Repo {
    path: PathBuf,
}

impl Repo {
    /// Opens `path`, verifying it is a git repository.
    pub fn open(path: impl Into<PathBuf>) -> Result<Self, RepoError> {
        let path = path.into();
        let repo = Self { path };
        match repo.git(&["rev-parse", "--git-dir"]) {
            Ok(_) => Ok(repo),
            Err(_) => Err(RepoError::NotARepository(repo.path)),
        }
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    fn git(&self, args: &[&str]) -> Result<String, RepoError> {
        let out = Command::new("git")
            .arg("-C")
            .arg(&self.path)
            .args(["-c", "core.quotepath=false"])
            .args(args)
            .env("GIT_CONFIG_GLOBAL", "/dev/null")
            .env("GIT_CONFIG_NOSYSTEM", "1")
            .output()
            .map_err(|e| RepoError::Git {
                context: args.join(" "),
                message: e.to_string(),
            })?;
        if !out.status.success() {
            return Err(RepoError::Git {
                context: args.join(" "),
                message: String::from_utf8_lossy(&out.stderr).trim().to_string(),
            });
        }
        Ok(String::from_utf8_lossy(&out.stdout).into_owned())
    }

    /// All commits reachable from any ref, sorted by (timestamp, id).
    pub fn list_commits(&self) -> Result<Vec<(String, DateTime<Utc>)>, RepoError> {
        let out = self.git(&["log", "--all", "--pretty=format:%H %ct"])?;
        let mut commits = Vec::new();
        for line in out.lines().filter(|l| !l.is_empty()) {
            let (id, ts) = line.split_once(' ').ok_or_else(|| RepoError::Git {
                context: "log --all".into(),
                message: format!("unparseable line {line:?}"),
            })?;
            let secs: i64 = ts.parse().map_err(|_| RepoError::Git {
                context: "log --all".into(),
                message: format!("bad timestamp in {line:?}"),
            })?;
            commits.push((
                id.to_string(),
                DateTime::<Utc>::from_timestamp(secs, 0).expect("valid epoch"),
            ));
        }
        if commits.is_empty() {
            return Err(RepoError::EmptyRepository);
        }
        commits.sort_by(|a, b| a.1.cmp(&b.1).then_with(|| a.0.cmp(&b.0)));
        Ok(commits)
    }

    fn verify_commit(&self, id: &str) -> Result<(), RepoError> {
        self.git(&["cat-file", "-e", &format!("{id}^{{commit}}")])
            .map(|_| ())
            .map_err(|_| RepoError::UnknownCommit(id.to_string()))
    }

    /// Mines one commit: the message, committer timestamp, changed files,
    /// and the first-parent diff with the configured context, plus hunk
    /// statistics and preprocessed token variants.
    pub fn extract_commit(&self, id: &str, opts: &ExtractOptions) -> Result<CommitRecord, RepoError> {
        self.verify_commit(id)?;
        let meta = self.git(&["show", "-s", "--format=%ct%x00%P%x00%B", id])?;
        let mut parts = meta.splitn(3, '\0');
        let secs: i64 = parts
            .next()
            .and_then(|s| s.trim().parse().ok())
            .ok_or_else(|| RepoError::Git {
                context: "show -s".into(),
                message: "missing timestamp".into(),
            })?;
        let parents: Vec<&str> = parts
            .next()
            .unwrap_or("")
            .split_whitespace()
            .collect();
        let message = parts.next().unwrap_or("").trim_end().to_string();

        let context_arg = format!("-U{}", opts.context_lines);
        let (names, raw_diff) = match parents.first() {
            Some(parent) => (
                self.git(&["diff", "--no-renames", "--no-ext-diff", "--name-only", parent, id])?,
                self.git(&[
                    "diff",
                    "--no-renames",
                    "--no-ext-diff",
                    "--no-color",
                    &context_arg,
                    parent,
                    id,
                ])?,
            ),
            None => (
                self.git(&["diff-tree", "--root", "--no-renames", "--no-commit-id", "--name-only", "-r", id])?,
                self.git(&["diff-tree", "--root", "--no-renames", "--no-commit-id", "-p", &context_arg, id])?,
            ),
        };

        let changed_files: Vec<String> = names
            .lines()
            .filter(|l| !l.is_empty())
            .map(str::to_string)
            .collect();

        let raw_lines: Vec<&str> = raw_diff.lines().collect();
        let (n_hunks, hunk_lines) = hunk_stats(&raw_lines);
        let avg_hunk_size = if n_hunks == 0 {
            0.0
        } else {
            hunk_lines as f64 / n_hunks as f64
        };

        let diff_lines: Vec<String> = strip_diff_noise(&raw_lines)
            .into_iter()
            .take(opts.diff_line_limit)
            .map(str::to_string)
            .collect();

        let pre_message = textprep::preprocess(&message);
        let pre_files = textprep::preprocess(&changed_files.join("\n"));
        let pre_diff = textprep::preprocess(&diff_lines.join("\n"));

        Ok(CommitRecord {
            id: id.to_string(),
            timestamp: DateTime::<Utc>::from_timestamp(secs, 0).expect("valid epoch"),
            message,
            changed_files,
            diff_lines,
            n_hunks,
            avg_hunk_size,
            pre_message,
            pre_files,
            pre_diff,
        })
    }

    /// All tags with their creation timestamp and peeled target commit.
    pub fn list_tags(&self) -> Result<Vec<Tag>, RepoError> {
        let out = self.git(&[
            "for-each-ref",
            "refs/tags",
            "--format=%(refname:short)%00%(creatordate:unix)%00%(objectname)%00%(*objectname)",
        ])?;
        let mut tags = Vec::new();
        for line in out.lines().filter(|l| !l.is_empty()) {
            let fields: Vec<&str> = line.split('\0').collect();
            if fields.len() != 4 {
                continue;
            }
            let secs: i64 = fields[1].parse().unwrap_or(0);
            let target = if fields[3].is_empty() { fields[2] } else { fields[3] };
            tags.push(Tag {
                name: fields[0].to_string(),
                timestamp: DateTime::<Utc>::from_timestamp(secs, 0).expect("valid epoch"),
                target_commit: target.to_string(),
                parsed_version: parse_version(fields[0]),
            });
        }
        Ok(tags)
    }

    /// True iff `commit_id` is an ancestor of (or equal to) the tag's target.
    pub fn is_ancestor(&self, commit_id: &str, tag: &Tag) -> Result<bool, RepoError> {
        self.verify_commit(commit_id)?;
        self.verify_commit(&tag.target_commit)
            .map_err(|_| RepoError::UnknownTag(tag.name.clone()))?;
        let status = Command::new("git")
            .arg("-C")
            .arg(&self.path)
            .args(["merge-base", "--is-ancestor", commit_id, &tag.target_commit])
            .env("GIT_CONFIG_GLOBAL", "/dev/null")
            .env("GIT_CONFIG_NOSYSTEM", "1")
            .status()
            .map_err(|e| RepoError::Git {
                context: "merge-base --is-ancestor".into(),
                message: e.to_string(),
            })?;
        match status.code() {
            Some(0) => Ok(true),
            Some(1) => Ok(false),
            other => Err(RepoError::Git {
                context: "merge-base --is-ancestor".into(),
                message: format!("unexpected exit {other:?}"),
            }),
        }
    }

    /// Every commit reachable from `target`, `target` included.
    pub fn ancestor_set(&self, target: &str) -> Result<BTreeSet<String>, RepoError> {
        self.verify_commit(target)?;
        let out = self.git(&["rev-list", target])?;
        Ok(out.lines().filter(|l| !l.is_empty()).map(str::to_string).collect())
    }

    /// Canonical identity of this clone: the origin URL when configured
    /// (trailing slashes and `.git` trimmed), otherwise the absolute path.
    pub fn canonical_source(&self) -> String {
        if let Ok(url) = self.git(&["config", "--get", "remote.origin.url"]) {
            let url = url.trim().trim_end_matches('/').trim_end_matches(".git");
            if !url.is_empty() {
                return url.to_string();
            }
        }
        self.path
            .canonicalize()
            .unwrap_or_else(|_| self.path.clone())
            .to_string_lossy()
            .into_owned()
    }
}

const NOISE_PREFIXES: [&str; 5] = ["diff --git", "index ", "+++ ", "--- ", "@@ "];

/// Drops diff metadata lines: exactly the lines starting with one of the five
/// noise prefixes, order preserved.
pub fn strip_diff_noise<'a>(lines: &[&'a str]) -> Vec<&'a str> {
    lines
        .iter()
        .filter(|line| !NOISE_PREFIXES.iter().any(|p| line.starts_with(p)))
        .copied()
        .collect()
}

/// Counts hunks and the changed+context lines belonging to them.
fn hunk_stats(lines: &[&str]) -> (u32, u64) {
    let mut n_hunks = 0u32;
    let mut hunk_lines = 0u64;
    let mut in_hunk = false;
    for line in lines {
        if line.starts_with("diff --git") {
            in_hunk = false;
        } else if line.starts_with("@@ ") {
            n_hunks += 1;
            in_hunk = true;
        } else if in_hunk
            && (line.starts_with('+') || line.starts_with('-') || line.starts_with(' ') || line.is_empty())
        {
            hunk_lines += 1;
        }
    }
    (n_hunks, hunk_lines)
}

/// Strips a leading "v"/"V" and any `word-` prefixes from a tag name, so
/// "v1.2.0" and "project-parent-3.1" compare as "1.2.0" and "3.1".
pub fn normalize_tag_name(name: &str) -> &str {
    static WORD_PREFIX: OnceLock<Regex> = OnceLock::new();
    let word = WORD_PREFIX.get_or_init(|| Regex::new(r"^[A-Za-z][A-Za-z0-9_]*-").unwrap());
    let mut s = name;
    loop {
        let bytes = s.as_bytes();
        if (bytes.first() == Some(&b'v') || bytes.first() == Some(&b'V'))
            && bytes.get(1).is_some_and(|c| c.is_ascii_digit())
        {
            s = &s[1..];
            continue;
        }
        if let Some(m) = word.find(s) {
            if m.end() < s.len() {
                s = &s[m.end()..];
                continue;
            }
        }
        break;
    }
    s
}

/// Parses the `(major, minor)` core out of a tag name, qualifier attached.
pub fn parse_version(name: &str) -> Option<ParsedVersion> {
    static CORE: OnceLock<Regex> = OnceLock::new();
    let core = CORE.get_or_init(|| Regex::new(r"(\d+)\.(\d+)").unwrap());
    let normalized = normalize_tag_name(name);
    let caps = core.captures(normalized)?;
    let major: u32 = caps.get(1)?.as_str().parse().ok()?;
    let minor: u32 = caps.get(2)?.as_str().parse().ok()?;
    let qualifier = normalized[caps.get(0)?.end()..].to_string();
    Some(ParsedVersion {
        major,
        minor,
        qualifier,
    })
}

/// Groups versioned tags by `(major, minor)` and sorts each branch by
/// timestamp (ties by name). Permutation-invariant in its input.
pub fn build_tag_tree(tags: Vec<Tag>) -> TagTree {
    let mut branches: BTreeMap<(u32, u32), Vec<Tag>> = BTreeMap::new();
    for tag in tags {
        let Some(v) = tag.parsed_version.clone() else {
            continue;
        };
        branches.entry((v.major, v.minor)).or_default().push(tag);
    }
    for branch in branches.values_mut() {
        branch.sort_by(|a, b| a.timestamp.cmp(&b.timestamp).then_with(|| a.name.cmp(&b.name)));
    }
    TagTree { branches }
}

/// Finds the tag matching an advisory version string and the anchor to
/// compute reachability from: the chronologically next tag with the same
/// major version, or the tag itself when it is the last one.
pub fn map_version_to_tag<'t>(version: &str, tree: &'t TagTree) -> Option<(&'t Tag, &'t Tag)> {
    let mut matched: Option<&Tag> = None;
    for branch in tree.branches.values() {
        for tag in branch {
            if normalize_tag_name(&tag.name) == version {
                let better = match matched {
                    None => true,
                    Some(m) => (tag.timestamp, &tag.name) < (m.timestamp, &m.name),
                };
                if better {
                    matched = Some(tag);
                }
            }
        }
    }
    let tag = matched?;
    let major = tag.parsed_version.as_ref().expect("matched tags are versioned").major;

    let mut same_major: Vec<&Tag> = tree
        .branches
        .iter()
        .filter(|((maj, _), _)| *maj == major)
        .flat_map(|(_, branch)| branch.iter())
        .collect();
    same_major.sort_by(|a, b| a.timestamp.cmp(&b.timestamp).then_with(|| a.name.cmp(&b.name)));

    let anchor = same_major
        .iter()
        .find(|t| (t.timestamp, &t.name) > (tag.timestamp, &tag.name))
        .copied()
        .unwrap_or(tag);
    Some((tag, anchor))
}
