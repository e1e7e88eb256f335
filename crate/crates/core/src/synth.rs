//! Synthetic evaluation corpora: deterministic git repositories and advisory
//! documents with planted fix signals, for end-to-end evaluation without a
//! curated vulnerability dataset.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::process::Command;

use chrono::{DateTime, Duration, TimeZone, Utc};
use rand::seq::IndexedRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::advisory::FixtureFetcher;
use crate::pipeline::{format_dataset, DatasetEntry};

/// Builds a throwaway git repository with fully pinned timestamps, authors,
/// and content, so repeated builds produce identical commit ids.
pub struct RepoBuilder {
    dir: PathBuf,
}

impl RepoBuilder {
    /// Initializes an empty repository at `dir` with `main` checked out.
    pub fn init(dir: impl Into<PathBuf>) -> Self {
        let dir = dir.into();
        std::fs::create_dir_all(&dir).expect("create repo dir");
        let builder = Self { dir };
        builder.git(&["init", "-q", "-b", "main"], None);
        builder
    }

    pub fn path(&self) -> &Path {
        &self.dir
    }

    fn git(&self, args: &[&str], when: Option<DateTime<Utc>>) -> String {
        let mut cmd = Command::new("git");
        cmd.arg("-C")
            .arg(&self.dir)
            .args([
                "-c",
                "user.name=fixture",
                "-c",
                "user.email=fixture@example.invalid",
                "-c",
                "commit.gpgsign=false",
            ])
            .args(args)
            .env("GIT_CONFIG_GLOBAL", "/dev/null")
            .env("GIT_CONFIG_NOSYSTEM", "1");
        if let Some(t) = when {
            let stamp = format!("{} +0000", t.timestamp());
            cmd.env("GIT_AUTHOR_DATE", &stamp).env("GIT_COMMITTER_DATE", &stamp);
        }
        let out = cmd.output().expect("run git");
        assert!(
            out.status.success(),
            "git {:?} failed: {}",
            args,
            String::from_utf8_lossy(&out.stderr)
        );
        String::from_utf8_lossy(&out.stdout).trim().to_string()
    }

    /// Writes `files`, stages everything, and commits at `when`. Returns the
    /// new commit id.
    pub fn commit(&self, when: DateTime<Utc>, message: &str, files: &[(&str, &str)]) -> String {
        for (path, content) in files {
            let full = self.dir.join(path);
            if let Some(parent) = full.parent() {
                std::fs::create_dir_all(parent).expect("create parent dir");
            }
            std::fs::write(full, content).expect("write file");
        }
        self.git(&["add", "-A"], None);
        self.git(
            &["commit", "-q", "--allow-empty", "-m", message],
            Some(when),
        );
        self.git(&["rev-parse", "HEAD"], None)
    }

    pub fn branch(&self, name: &str) {
        self.git(&["checkout", "-q", "-b", name], None);
    }

    pub fn checkout(&self, name: &str) {
        self.git(&["checkout", "-q", name], None);
    }

    /// Merges `branch` into the current branch with a merge commit.
    pub fn merge(&self, branch: &str, when: DateTime<Utc>, message: &str) -> String {
        self.git(&["merge", "-q", "--no-ff", "-m", message, branch], Some(when));
        self.git(&["rev-parse", "HEAD"], None)
    }

    /// Creates an annotated tag at HEAD with a pinned tagger date.
    pub fn tag(&self, name: &str, when: DateTime<Utc>) {
        self.git(&["tag", "-a", "-m", name, name], Some(when));
    }
}

/// Convenience for pinned timestamps in fixtures and generated corpora.
pub fn day(year: i32, month: u32, dom: u32) -> DateTime<Utc> {
    Utc.with_ymd_and_hms(year, month, dom, 12, 0, 0).unwrap()
}

/// Which signal an advisory's planted fix carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SignalClass {
    /// The fix commit message contains the CVE id.
    MessageId,
    /// The advisory's references link the fix commit.
    NvdReference,
    /// Only path and code-token overlap with the description.
    LexicalOnly,
}

#[derive(Debug, Clone, Copy)]
pub struct CorpusSpec {
    pub message_signal: usize,
    pub reference_signal: usize,
    pub lexical_signal: usize,
    pub seed: u64,
}

impl Default for CorpusSpec {
    fn default() -> Self {
        Self {
            message_signal: 7,
            reference_signal: 7,
            lexical_signal: 6,
            seed: 7,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GeneratedAdvisory {
    pub cve_id: String,
    pub class: SignalClass,
    pub repo_dir: PathBuf,
    pub fix_commit: String,
    pub advisory_file: PathBuf,
}

#[derive(Debug, Clone)]
pub struct GeneratedCorpus {
    pub root: PathBuf,
    pub entries: Vec<GeneratedAdvisory>,
    pub dataset_file: PathBuf,
    pub advisory_dir: PathBuf,
    pub fixtures_dir: PathBuf,
    pub store_dir: PathBuf,
}

impl GeneratedCorpus {
    pub fn dataset_entries(&self) -> Vec<DatasetEntry> {
        self.entries
            .iter()
            .map(|e| DatasetEntry {
                cve_id: e.cve_id.clone(),
                repo_path: e.repo_dir.clone(),
                fix_ids: BTreeSet::from([e.fix_commit.clone()]),
            })
            .collect()
    }
}

// Vocabulary for descriptions and fix messages. Kept disjoint from the
// mundane-commit vocabulary so lexical overlap is a real signal.
const COMPONENTS: [&str; 16] = [
    "session", "token", "header", "cookie", "packet", "request", "buffer", "cursor", "handle",
    "query", "frame", "socket", "stream", "payload", "digest", "channel",
];
const VERBS: [&str; 6] = ["parse", "decode", "merge", "split", "flush", "encode"];
const MUNDANE_MESSAGES: [&str; 12] = [
    "refactor storage layer",
    "update build scripts",
    "improve logging output",
    "tidy bench harness",
    "bump dependency pins",
    "rework thread pool",
    "simplify config loading",
    "optimize serializer throughput",
    "adjust ci matrix",
    "polish docs generator",
    "restructure module exports",
    "migrate lint rules",
];
const MUNDANE_FILES: [&str; 6] = [
    "src/core/storage.py",
    "src/core/runtime.py",
    "src/core/output.py",
    "tools/bench.py",
    "src/core/loader.py",
    "src/core/exporter.py",
];

/// Generates a deterministic corpus of advisories over fixture repositories
/// with planted fix signals: `message_signal` fixes carry the CVE id in
/// their message, `reference_signal` advisories link their fix from the
/// references, and `lexical_signal` fixes overlap the description only
/// through paths, identifiers, and wording.
///
/// Writes `repos/`, `advisories/` (one minimal JSON per CVE), `fixtures/`
/// (reference pages keyed by URL digest), and `dataset.tsv` under `root`.
pub fn generate_corpus(root: &Path, spec: &CorpusSpec) -> std::io::Result<GeneratedCorpus> {
    let advisory_dir = root.join("advisories");
    let fixtures_dir = root.join("fixtures");
    let repos_dir = root.join("repos");
    std::fs::create_dir_all(&advisory_dir)?;
    std::fs::create_dir_all(&fixtures_dir)?;
    std::fs::create_dir_all(&repos_dir)?;

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let total = spec.message_signal + spec.reference_signal + spec.lexical_signal;
    let mut entries = Vec::with_capacity(total);

    for i in 0..total {
        let class = if i < spec.message_signal {
            SignalClass::MessageId
        } else if i < spec.message_signal + spec.reference_signal {
            SignalClass::NvdReference
        } else {
            SignalClass::LexicalOnly
        };
        let cve_id = format!("CVE-2021-{}", 1000 + i);
        let repo_rel = PathBuf::from(format!("repos/repo{i:02}"));
        let repo_dir = root.join(&repo_rel);
        let published = day(2021, 3, 1) + Duration::days(i as i64);

        let comp: Vec<&str> = COMPONENTS
            .choose_multiple(&mut rng, 4)
            .copied()
            .collect();
        let verb = VERBS.choose(&mut rng).copied().expect("verbs non-empty");
        let code_token = format!("{verb}{}", capitalize(comp[1]));
        let code_path = format!("src/{}/{}_codec.py", comp[0], comp[1]);
        let minor = i % 7 + 1;
        let description = format!(
            "A flaw in the {} {} handler of the acme-mesh project before 1.{}.0 \
             allows remote attackers to trigger a denial of service via crafted {} data. \
             The {} routine in {} mishandles oversized {} values.",
            comp[0], comp[1], minor, comp[2], code_token, code_path, comp[3]
        );

        let builder = RepoBuilder::init(&repo_dir);
        let jitter: i64 = rng.random_range(0..5);
        for (n, days_before) in [300, 250, 200, 150, 120, 90, 70, 55].iter().enumerate() {
            let msg_base = MUNDANE_MESSAGES[(i + n) % MUNDANE_MESSAGES.len()];
            let message = if n % 5 == 0 {
                format!("{msg_base}\n\nSee #{}", 100 + i + n)
            } else {
                msg_base.to_string()
            };
            let file = MUNDANE_FILES[(i + n) % MUNDANE_FILES.len()];
            builder.commit(
                published - Duration::days(days_before + jitter),
                &message,
                &[(file, &format!("state = {n} + {i}\n"))],
            );
        }

        let fix_when = published - Duration::days(40);
        let fix_message = match class {
            SignalClass::MessageId => format!(
                "Fix {cve_id}: validate {} {} input before use",
                comp[0], comp[1]
            ),
            SignalClass::NvdReference => {
                format!("Validate {} {} input before use", comp[0], comp[1])
            }
            SignalClass::LexicalOnly => format!(
                "Reject oversized {} values in {} {} handling",
                comp[3], code_token, comp[2]
            ),
        };
        let fix_content = format!(
            "MAX_{} = 4096\n\n\ndef {}_{}(data):\n    if len(data) > MAX_{}:\n        raise ValueError(\"oversized {}\")\n    return {}(data)\n",
            comp[1].to_uppercase(),
            verb,
            comp[1],
            comp[1].to_uppercase(),
            comp[3],
            code_token,
        );
        let fix_commit = builder.commit(fix_when, &fix_message, &[(code_path.as_str(), &fix_content)]);
        builder.tag(&format!("v1.{minor}.0"), fix_when + Duration::days(10));

        builder.commit(
            published - Duration::days(20),
            MUNDANE_MESSAGES[(i + 9) % MUNDANE_MESSAGES.len()],
            &[("src/core/runtime.py", &format!("phase = {i}\n"))],
        );
        builder.commit(
            published - Duration::days(15),
            "describe release process",
            &[("README.md", &format!("release notes draft {i}\n"))],
        );
        builder.commit(
            published - Duration::days(10),
            MUNDANE_MESSAGES[(i + 10) % MUNDANE_MESSAGES.len()],
            &[("src/core/output.py", &format!("verbosity = {i}\n"))],
        );
        builder.commit(
            published + Duration::days(5),
            MUNDANE_MESSAGES[(i + 11) % MUNDANE_MESSAGES.len()],
            &[("src/core/loader.py", &format!("retries = {i}\n"))],
        );
        builder.commit(
            published + Duration::days(15),
            MUNDANE_MESSAGES[(i + 3) % MUNDANE_MESSAGES.len()],
            &[("tools/bench.py", &format!("warmup = {i}\n"))],
        );

        // reference pages: every advisory gets an analysis page; the
        // reference-signal class also links the fix commit itself
        let analysis_url = format!("https://adv.example/{cve_id}/analysis");
        let analysis_body = format!(
            "<html><head><title>{cve_id}</title></head><body>\
             <h1>Analysis of {cve_id}</h1>\
             <p>The {} {} handler mishandles {} data; oversized {} values \
             crash the service. See the tracker at \
             <a href=\"https://tracker.example/{cve_id}\">tracker.example</a>.</p>\
             </body></html>",
            comp[0], comp[1], comp[2], comp[3]
        );
        write_fixture(&fixtures_dir, &analysis_url, &analysis_body)?;
        let mut reference_urls = vec![analysis_url];

        if class == SignalClass::NvdReference {
            let commit_url = format!("https://git.example/acme/repo{i:02}/commit/{fix_commit}");
            let commit_body = format!(
                "<html><body><p>{fix_message}</p>\
                 <a href=\"/acme/repo{i:02}/commit/{fix_commit}\">patch</a></body></html>"
            );
            write_fixture(&fixtures_dir, &commit_url, &commit_body)?;
            reference_urls.push(commit_url);
        }

        let advisory_file = advisory_dir.join(format!("{cve_id}.json"));
        let doc = serde_json::json!({
            "id": cve_id,
            "published": published.to_rfc3339(),
            "description": description,
            "references": reference_urls,
        });
        std::fs::write(&advisory_file, serde_json::to_string_pretty(&doc).expect("json"))?;

        entries.push(GeneratedAdvisory {
            cve_id,
            class,
            repo_dir,
            fix_commit,
            advisory_file,
        });
    }

    let dataset_file = root.join("dataset.tsv");
    let dataset: Vec<DatasetEntry> = entries
        .iter()
        .map(|e| DatasetEntry {
            cve_id: e.cve_id.clone(),
            repo_path: PathBuf::from(format!(
                "repos/{}",
                e.repo_dir.file_name().expect("repo dir name").to_string_lossy()
            )),
            fix_ids: BTreeSet::from([e.fix_commit.clone()]),
        })
        .collect();
    std::fs::write(&dataset_file, format_dataset(&dataset))?;

    Ok(GeneratedCorpus {
        root: root.to_path_buf(),
        entries,
        dataset_file,
        advisory_dir,
        fixtures_dir,
        store_dir: root.join("store"),
    })
}

fn capitalize(word: &str) -> String {
    let mut chars = word.chars();
    match chars.next() {
        Some(first) => first.to_uppercase().collect::<String>() + chars.as_str(),
        None => String::new(),
    }
}

fn write_fixture(dir: &Path, url: &str, body: &str) -> std::io::Result<()> {
    std::fs::write(dir.join(FixtureFetcher::fixture_name(url)), body)
}
