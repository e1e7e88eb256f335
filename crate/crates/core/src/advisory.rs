//! Advisory ingestion: load raw vulnerability data (NVD JSON or a minimal
//! local document) and distill it into an [`AdvisoryRecord`] with extracted
//! versions, paths, code tokens, referenced-commit prefixes, and
//! reference-page keywords.

use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;
use std::sync::OnceLock;

use chrono::{DateTime, NaiveDateTime, Utc};
use regex::Regex;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::filter::DEFAULT_RELEVANT_EXTENSIONS;
use crate::textprep::{self, TokenList};

#[derive(Debug, Error)]
pub enum AdvisoryError {
    #[error("missing field `{0}` in advisory document")]
    MissingField(String),
    #[error("malformed CVE id `{0}`")]
    MalformedId(String),
    #[error("invalid value for `{field}`: {value}")]
    InvalidField { field: String, value: String },
    #[error("failed to fetch {url}: {reason}")]
    FetchFailure { url: String, reason: String },
    #[error("cannot read advisory file {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("advisory document is not valid JSON: {0}")]
    Json(#[from] serde_json::Error),
}

/// Raw advisory data, straight from the source document.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawAdvisory {
    pub cve_id: String,
    pub description: String,
    pub published: DateTime<Utc>,
    pub reference_urls: Vec<String>,
}

/// Distilled vulnerability information used by the rest of the pipeline.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AdvisoryRecord {
    pub raw: RawAdvisory,
    pub versions: Vec<String>,
    pub paths: Vec<String>,
    pub code_tokens: Vec<String>,
    /// 8-char lowercase hex prefixes of commits linked from the source
    /// document's references.
    pub nvd_commit_prefixes: BTreeSet<String>,
    /// 8-char lowercase hex prefixes of commits linked from the reference
    /// pages themselves.
    pub advisory_commit_prefixes: BTreeSet<String>,
    /// The 20 most frequent preprocessed tokens across all fetched reference
    /// pages, most frequent first.
    pub reference_keywords: Vec<String>,
}

/// Fetches a page body for a URL. Implementations decide where the bytes
/// come from; the rest of the pipeline stays network-free.
pub trait ReferenceFetcher {
    fn fetch(&self, url: &str) -> Result<String, String>;
}

/// Serves pages from a directory of files, one per URL, named by the
/// lowercase hex SHA-256 digest of the URL. Unknown URLs fail.
pub struct FixtureFetcher {
    dir: PathBuf,
}

impl FixtureFetcher {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }

    /// The fixture filename for a URL.
    pub fn fixture_name(url: &str) -> String {
        hex::encode(Sha256::digest(url.as_bytes()))
    }
}

impl ReferenceFetcher for FixtureFetcher {
    fn fetch(&self, url: &str) -> Result<String, String> {
        let path = self.dir.join(Self::fixture_name(url));
        std::fs::read_to_string(&path).map_err(|e| format!("no fixture {}: {e}", path.display()))
    }
}

/// In-memory fetcher, mostly for tests.
#[derive(Debug, Default)]
pub struct StaticFetcher(pub BTreeMap<String, String>);

impl ReferenceFetcher for StaticFetcher {
    fn fetch(&self, url: &str) -> Result<String, String> {
        self.0.get(url).cloned().ok_or_else(|| "unknown url".to_string())
    }
}

/// Where a raw advisory comes from.
#[derive(Debug, Clone)]
pub enum AdvisorySource {
    File(PathBuf),
    Api { cve_id: String, endpoint: String },
}

fn cve_id_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^CVE-\d{4}-\d{4,}$").unwrap())
}

fn version_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\d+(\.\d+)+([A-Za-z][A-Za-z0-9]*)?").unwrap())
}

/// Loads a [`RawAdvisory`] from a local file or an API endpoint.
///
/// Accepts the NVD CVE API shape (`vulnerabilities[0].cve` or a bare `cve`
/// object with `id`, `published`, `descriptions[].value`, `references[].url`)
/// and a minimal document with `id`, `published` (RFC 3339), `description`,
/// and `references` as an array of URL strings.
pub fn load_raw_advisory(
    source: &AdvisorySource,
    fetcher: &dyn ReferenceFetcher,
) -> Result<RawAdvisory, AdvisoryError> {
    let text = match source {
        AdvisorySource::File(path) => {
            std::fs::read_to_string(path).map_err(|e| AdvisoryError::Io {
                path: path.clone(),
                source: e,
            })?
        }
        AdvisorySource::Api { cve_id, endpoint } => {
            if !cve_id_re().is_match(cve_id) {
                return Err(AdvisoryError::MalformedId(cve_id.clone()));
            }
            let url = format!("{endpoint}?cveId={cve_id}");
            fetcher
                .fetch(&url)
                .map_err(|reason| AdvisoryError::FetchFailure { url, reason })?
        }
    };
    parse_raw_advisory(&text)
}

/// Parses advisory JSON text into a [`RawAdvisory`].
pub fn parse_raw_advisory(text: &str) -> Result<RawAdvisory, AdvisoryError> {
    let value: serde_json::Value = serde_json::from_str(text)?;
    let cve = if let Some(vulns) = value.get("vulnerabilities") {
        vulns
            .as_array()
            .and_then(|a| a.first())
            .and_then(|v| v.get("cve"))
            .ok_or_else(|| AdvisoryError::MissingField("vulnerabilities[0].cve".into()))?
            .clone()
    } else if let Some(cve) = value.get("cve") {
        cve.clone()
    } else {
        return parse_minimal_advisory(&value);
    };

    let id = required_str(&cve, "id")?;
    let published = parse_timestamp(&required_str(&cve, "published")?)?;
    let descriptions = cve
        .get("descriptions")
        .and_then(|d| d.as_array())
        .ok_or_else(|| AdvisoryError::MissingField("descriptions".into()))?;
    let description = descriptions
        .iter()
        .find(|d| d.get("lang").and_then(|l| l.as_str()) == Some("en"))
        .or_else(|| descriptions.first())
        .and_then(|d| d.get("value"))
        .and_then(|v| v.as_str())
        .ok_or_else(|| AdvisoryError::MissingField("descriptions[].value".into()))?
        .to_string();
    let references = cve
        .get("references")
        .and_then(|r| r.as_array())
        .ok_or_else(|| AdvisoryError::MissingField("references".into()))?
        .iter()
        .filter_map(|r| r.get("url").and_then(|u| u.as_str()))
        .map(str::to_string)
        .collect();

    finish_raw(id, description, published, references)
}

fn parse_minimal_advisory(value: &serde_json::Value) -> Result<RawAdvisory, AdvisoryError> {
    let id = required_str(value, "id")?;
    let published = parse_timestamp(&required_str(value, "published")?)?;
    let description = required_str(value, "description")?;
    let references = value
        .get("references")
        .and_then(|r| r.as_array())
        .ok_or_else(|| AdvisoryError::MissingField("references".into()))?
        .iter()
        .filter_map(|r| r.as_str())
        .map(str::to_string)
        .collect();
    finish_raw(id, description, published, references)
}

fn finish_raw(
    id: String,
    description: String,
    published: DateTime<Utc>,
    reference_urls: Vec<String>,
) -> Result<RawAdvisory, AdvisoryError> {
    if !cve_id_re().is_match(&id) {
        return Err(AdvisoryError::MalformedId(id));
    }
    Ok(RawAdvisory {
        cve_id: id,
        description,
        published,
        reference_urls,
    })
}

fn required_str(value: &serde_json::Value, field: &str) -> Result<String, AdvisoryError> {
    value
        .get(field)
        .and_then(|v| v.as_str())
        .map(str::to_string)
        .ok_or_else(|| AdvisoryError::MissingField(field.to_string()))
}

fn parse_timestamp(text: &str) -> Result<DateTime<Utc>, AdvisoryError> {
    if let Ok(t) = DateTime::parse_from_rfc3339(text) {
        return Ok(t.with_timezone(&Utc));
    }
    // NVD timestamps carry no offset, e.g. "2020-11-18T14:15:11.123"
    if let Ok(t) = NaiveDateTime::parse_from_str(text, "%Y-%m-%dT%H:%M:%S%.f") {
        return Ok(t.and_utc());
    }
    Err(AdvisoryError::InvalidField {
        field: "published".into(),
        value: text.into(),
    })
}

/// Extracts version strings: maximal substrings of `digit(.digit)+`,
/// optionally followed by an alphanumeric qualifier ("3.0M1"), in order of
/// appearance, de-duplicated. Typos stay as written.
pub fn extract_versions(description: &str) -> Vec<String> {
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for m in version_re().find_iter(description) {
        if seen.insert(m.as_str()) {
            out.push(m.as_str().to_string());
        }
    }
    out
}

/// Extracts path-like tokens: whitespace-split, punctuation-trimmed tokens
/// containing a `/`, or dot-separated filenames whose extension is in the
/// default relevant-extension list. Order preserved, de-duplicated.
pub fn extract_paths(description: &str) -> Vec<String> {
    let defaults: Vec<String> = DEFAULT_RELEVANT_EXTENSIONS
        .iter()
        .map(|s| s.to_string())
        .collect();
    extract_paths_with(description, &defaults)
}

/// [`extract_paths`] against a configurable extension list.
pub fn extract_paths_with(description: &str, extensions: &[String]) -> Vec<String> {
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for raw in description.split_whitespace() {
        let token = trim_punctuation(raw);
        if token.is_empty() {
            continue;
        }
        let is_path = token.contains('/')
            || crate::filter::has_relevant_extension(token, extensions);
        if is_path && seen.insert(token.to_string()) {
            out.push(token.to_string());
        }
    }
    out
}

/// Extracts CamelCase, snake_case, and dot.case identifiers from the
/// description, excluding anything [`extract_paths`] recognizes as a path.
pub fn extract_code_tokens(description: &str) -> Vec<String> {
    let defaults: Vec<String> = DEFAULT_RELEVANT_EXTENSIONS
        .iter()
        .map(|s| s.to_string())
        .collect();
    extract_code_tokens_with(description, &defaults)
}

/// [`extract_code_tokens`] against a configurable extension list.
pub fn extract_code_tokens_with(description: &str, extensions: &[String]) -> Vec<String> {
    let paths: BTreeSet<String> = extract_paths_with(description, extensions)
        .into_iter()
        .collect();
    let mut out = Vec::new();
    for raw in description.split_whitespace() {
        let token = trim_punctuation(raw);
        if token.is_empty() || paths.contains(token) {
            continue;
        }
        if is_code_token(token) {
            out.push(token.to_string());
        }
    }
    out
}

fn is_code_token(token: &str) -> bool {
    if !token.chars().any(|c| c.is_alphabetic()) {
        return false;
    }
    let snake = token.split('_').filter(|p| !p.is_empty()).count() >= 2;
    let dotted = !token.contains('/')
        && token.split('.').filter(|p| !p.is_empty()).count() >= 2;
    snake || dotted || textprep::has_camel_boundary(token)
}

fn trim_punctuation(token: &str) -> &str {
    token.trim_matches(|c: char| {
        matches!(c, '"' | '\'' | '(' | ')' | ',' | ';' | ':' | '!' | '?' | '.' | '<' | '>'
            | '[' | ']' | '{' | '}' | '`')
    })
}

/// Collects 8-char lowercase hex commit prefixes from URLs containing
/// `/commit/`. Order-insensitive by construction.
pub fn collect_commit_prefixes<S: AsRef<str>>(urls: &[S]) -> BTreeSet<String> {
    let mut out = BTreeSet::new();
    for url in urls {
        let url = url.as_ref();
        if let Some(pos) = url.find("/commit/") {
            let tail = &url[pos + "/commit/".len()..];
            let prefix: String = tail.chars().take(8).collect::<String>().to_lowercase();
            if prefix.len() == 8 && prefix.chars().all(|c| c.is_ascii_hexdigit()) {
                out.insert(prefix);
            }
        }
    }
    out
}

/// Outcome of scraping the advisory's reference pages.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ScrapeResult {
    /// Most frequent preprocessed tokens across all fetched pages, most
    /// frequent first; ties broken lexicographically.
    pub keywords: Vec<String>,
    pub commit_prefixes: BTreeSet<String>,
    pub report: FetchReport,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct FetchReport {
    pub attempted: usize,
    pub fetched: usize,
    pub failures: Vec<FetchFailure>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FetchFailure {
    pub url: String,
    pub reason: String,
}

/// Fetches every reference page, counts preprocessed token frequencies
/// across all pages, and collects commit prefixes from the URLs appearing on
/// them. Pages are processed in sorted-by-URL order so the result does not
/// depend on fetch order; unreachable pages are skipped and reported.
pub fn scrape_reference_keywords(
    urls: &[String],
    fetcher: &dyn ReferenceFetcher,
    top_k: usize,
) -> ScrapeResult {
    let unique: BTreeSet<&String> = urls.iter().collect();
    let mut report = FetchReport {
        attempted: unique.len(),
        ..FetchReport::default()
    };
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    let mut page_urls: Vec<String> = Vec::new();

    for url in unique {
        match fetcher.fetch(url) {
            Ok(body) => {
                report.fetched += 1;
                let text = html_to_text(&body);
                for token in textprep::preprocess(&text).0 {
                    *counts.entry(token).or_insert(0) += 1;
                }
                page_urls.extend(find_urls(&body));
            }
            Err(reason) => report.failures.push(FetchFailure {
                url: url.clone(),
                reason,
            }),
        }
    }

    let mut ranked: Vec<(&String, &usize)> = counts.iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(a.1).then_with(|| a.0.cmp(b.0)));
    let keywords = ranked.into_iter().take(top_k).map(|(t, _)| t.clone()).collect();

    ScrapeResult {
        keywords,
        commit_prefixes: collect_commit_prefixes(&page_urls),
        report,
    }
}

/// Strips tags and a few common entities out of an HTML page; good enough to
/// keep markup out of the keyword counts.
fn html_to_text(body: &str) -> String {
    static SCRIPT: OnceLock<Regex> = OnceLock::new();
    static TAG: OnceLock<Regex> = OnceLock::new();
    let script = SCRIPT
        .get_or_init(|| Regex::new(r"(?si)<(script|style)\b.*?</(script|style)>").unwrap());
    let tag = TAG.get_or_init(|| Regex::new(r"<[^>]*>").unwrap());
    let no_scripts = script.replace_all(body, " ");
    let no_tags = tag.replace_all(&no_scripts, " ");
    no_tags
        .replace("&amp;", "&")
        .replace("&lt;", "<")
        .replace("&gt;", ">")
        .replace("&quot;", "\"")
        .replace("&#39;", "'")
        .replace("&nbsp;", " ")
}

/// Pulls absolute URLs and href/src attribute values out of a page body.
fn find_urls(body: &str) -> Vec<String> {
    static ABS: OnceLock<Regex> = OnceLock::new();
    static ATTR: OnceLock<Regex> = OnceLock::new();
    let abs = ABS.get_or_init(|| Regex::new(r#"https?://[^\s"'<>]+"#).unwrap());
    let attr =
        ATTR.get_or_init(|| Regex::new(r#"(?i)(?:href|src)\s*=\s*["']([^"'\s>]+)["']"#).unwrap());
    let mut out: Vec<String> = abs.find_iter(body).map(|m| m.as_str().to_string()).collect();
    out.extend(
        attr.captures_iter(body)
            .map(|c| c.get(1).unwrap().as_str().to_string()),
    );
    out
}

/// Builds the full [`AdvisoryRecord`] from a raw advisory.
pub fn distill(
    raw: RawAdvisory,
    fetcher: &dyn ReferenceFetcher,
    extensions: &[String],
    top_k_reference_words: usize,
) -> (AdvisoryRecord, FetchReport) {
    let scraped = scrape_reference_keywords(&raw.reference_urls, fetcher, top_k_reference_words);
    let record = AdvisoryRecord {
        versions: extract_versions(&raw.description),
        paths: extract_paths_with(&raw.description, extensions),
        code_tokens: extract_code_tokens_with(&raw.description, extensions),
        nvd_commit_prefixes: collect_commit_prefixes(&raw.reference_urls),
        advisory_commit_prefixes: scraped.commit_prefixes,
        reference_keywords: scraped.keywords,
        raw,
    };
    (record, scraped.report)
}

impl AdvisoryRecord {
    /// The preprocessed description, used as a similarity query.
    pub fn preprocessed_description(&self) -> TokenList {
        textprep::preprocess(&self.raw.description)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn versions_single_match() {
        assert_eq!(extract_versions("versions through 4.2.0 are affected"), vec!["4.2.0"]);
    }

    #[test]
    fn versions_dedup_and_order() {
        assert_eq!(
            extract_versions("fixed in 1.6.0, 1.7.0 and 1.6.0"),
            vec!["1.6.0", "1.7.0"]
        );
    }

    #[test]
    fn versions_typos_kept_as_written() {
        assert_eq!(extract_versions("affects 0.22 users"), vec!["0.22"]);
    }

    #[test]
    fn versions_with_qualifier() {
        assert_eq!(extract_versions("since 3.0M1 only"), vec!["3.0M1"]);
    }

    #[test]
    fn paths_basic() {
        assert_eq!(
            extract_paths("flaw in example/file.py allows..."),
            vec!["example/file.py"]
        );
    }

    #[test]
    fn paths_empty() {
        assert!(extract_paths("a heap overflow").is_empty());
    }

    #[test]
    fn paths_dedup() {
        assert_eq!(
            extract_paths("see src/main/Foo.java and src/main/Foo.java"),
            vec!["src/main/Foo.java"]
        );
    }

    #[test]
    fn paths_bare_filename_with_code_extension() {
        assert_eq!(extract_paths("the file Parser.java is affected"), vec!["Parser.java"]);
    }

    #[test]
    fn code_tokens_camel() {
        assert_eq!(
            extract_code_tokens("the parseObject method of FastJson"),
            vec!["parseObject", "FastJson"]
        );
    }

    #[test]
    fn code_tokens_exclude_paths() {
        assert!(extract_code_tokens("flaw in example/file.py").is_empty());
    }

    #[test]
    fn code_tokens_snake() {
        assert_eq!(
            extract_code_tokens("uses snake_case_name internally"),
            vec!["snake_case_name"]
        );
    }

    #[test]
    fn code_tokens_need_a_letter() {
        assert!(extract_code_tokens("between 1.2.3 and 2.0").is_empty());
    }

    #[test]
    fn commit_prefixes_basic() {
        let set = collect_commit_prefixes(&["https://github.com/x/y/commit/abcdef1234567890"]);
        assert_eq!(set, BTreeSet::from(["abcdef12".to_string()]));
    }

    #[test]
    fn commit_prefixes_no_pattern() {
        assert!(collect_commit_prefixes(&["https://github.com/x/y/pull/42"]).is_empty());
    }

    #[test]
    fn commit_prefixes_lowercased() {
        let set = collect_commit_prefixes(&["https://g.com/x/y/commit/ABCDEF1234"]);
        assert_eq!(set, BTreeSet::from(["abcdef12".to_string()]));
    }

    #[test]
    fn commit_prefixes_reject_non_hex() {
        assert!(collect_commit_prefixes(&["https://g.com/x/y/commit/zzzzzzzz11"]).is_empty());
        assert!(collect_commit_prefixes(&["https://g.com/x/y/commit/abc"]).is_empty());
    }

    fn minimal_doc() -> String {
        serde_json::json!({
            "id": "CVE-2020-28724",
            "published": "2020-11-18T12:00:00Z",
            "description": "Open redirect in lib/web.py",
            "references": ["https://example.org/advisory/1"]
        })
        .to_string()
    }

    #[test]
    fn load_minimal_local_file() {
        let raw = parse_raw_advisory(&minimal_doc()).unwrap();
        assert_eq!(raw.cve_id, "CVE-2020-28724");
        assert_eq!(raw.published.to_rfc3339(), "2020-11-18T12:00:00+00:00");
        assert_eq!(raw.reference_urls.len(), 1);
    }

    #[test]
    fn load_nvd_shape() {
        let doc = serde_json::json!({
            "vulnerabilities": [{"cve": {
                "id": "CVE-2019-0001",
                "published": "2019-01-02T03:04:05.000",
                "descriptions": [
                    {"lang": "es", "value": "otra"},
                    {"lang": "en", "value": "a heap overflow"}
                ],
                "references": [
                    {"url": "https://a.example/1"},
                    {"url": "https://b.example/2"}
                ]
            }}]
        })
        .to_string();
        let raw = parse_raw_advisory(&doc).unwrap();
        assert_eq!(raw.description, "a heap overflow");
        assert_eq!(
            raw.reference_urls,
            vec!["https://a.example/1".to_string(), "https://b.example/2".to_string()]
        );
    }

    #[test]
    fn load_zero_references() {
        let doc = serde_json::json!({
            "id": "CVE-2020-1000",
            "published": "2020-01-01T00:00:00Z",
            "description": "x y z",
            "references": []
        })
        .to_string();
        assert!(parse_raw_advisory(&doc).unwrap().reference_urls.is_empty());
    }

    #[test]
    fn load_missing_published() {
        let doc = serde_json::json!({
            "id": "CVE-2020-1000",
            "description": "x",
            "references": []
        })
        .to_string();
        match parse_raw_advisory(&doc) {
            Err(AdvisoryError::MissingField(f)) => assert_eq!(f, "published"),
            other => panic!("expected MissingField, got {other:?}"),
        }
    }

    #[test]
    fn load_malformed_id() {
        let doc = serde_json::json!({
            "id": "CVE-20-1",
            "published": "2020-01-01T00:00:00Z",
            "description": "x",
            "references": []
        })
        .to_string();
        assert!(matches!(parse_raw_advisory(&doc), Err(AdvisoryError::MalformedId(_))));
    }

    #[test]
    fn scrape_finds_prefixes_and_counts_failures() {
        let mut pages = BTreeMap::new();
        pages.insert(
            "https://ref.example/a".to_string(),
            r#"<html><body>patch <a href="https://g.com/x/y/commit/0a1b2c3d9e">here</a></body></html>"#
                .to_string(),
        );
        let fetcher = StaticFetcher(pages);
        let urls = vec!["https://ref.example/a".to_string(), "https://ref.example/missing".to_string()];
        let result = scrape_reference_keywords(&urls, &fetcher, 20);
        assert!(result.commit_prefixes.contains("0a1b2c3d"));
        assert_eq!(result.report.fetched, 1);
        assert_eq!(result.report.failures.len(), 1);
    }

    #[test]
    fn scrape_empty_url_list() {
        let fetcher = StaticFetcher::default();
        let result = scrape_reference_keywords(&[], &fetcher, 20);
        assert!(result.keywords.is_empty());
        assert!(result.commit_prefixes.is_empty());
    }

    #[test]
    fn scrape_top_k_matches_brute_force_count() {
        // three pages with controlled word frequencies
        let mut pages = BTreeMap::new();
        pages.insert("u1".to_string(), "alpha alpha beta gamma".to_string());
        pages.insert("u2".to_string(), "beta beta delta alpha".to_string());
        pages.insert("u3".to_string(), "gamma delta epsilon".to_string());
        let fetcher = StaticFetcher(pages.clone());
        let urls: Vec<String> = pages.keys().cloned().collect();

        // independent frequency count over the same fixture corpus
        let mut counts: BTreeMap<String, usize> = BTreeMap::new();
        for body in pages.values() {
            for token in crate::textprep::preprocess(body).0 {
                *counts.entry(token).or_insert(0) += 1;
            }
        }
        let mut expect: Vec<(String, usize)> = counts.into_iter().collect();
        expect.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        let expect: Vec<String> = expect.into_iter().take(3).map(|(t, _)| t).collect();

        let result = scrape_reference_keywords(&urls, &fetcher, 3);
        assert_eq!(result.keywords, expect);
    }

    #[test]
    fn distill_is_deterministic() {
        let raw = parse_raw_advisory(&minimal_doc()).unwrap();
        let fetcher = StaticFetcher(BTreeMap::from([(
            "https://example.org/advisory/1".to_string(),
            "<p>fix at https://g.com/x/y/commit/abcdef012345</p>".to_string(),
        )]));
        let exts: Vec<String> = DEFAULT_RELEVANT_EXTENSIONS.iter().map(|s| s.to_string()).collect();
        let (a, _) = distill(raw.clone(), &fetcher, &exts, 20);
        let (b, _) = distill(raw, &fetcher, &exts, 20);
        assert_eq!(
            serde_json::to_string(&a).unwrap(),
            serde_json::to_string(&b).unwrap()
        );
        assert!(a.advisory_commit_prefixes.contains("abcdef01"));
    }

    proptest! {
        #[test]
        fn prefixes_order_insensitive(mut urls in proptest::collection::vec("[ -~]{0,60}", 0..12)) {
            let forward = collect_commit_prefixes(&urls);
            urls.reverse();
            let backward = collect_commit_prefixes(&urls);
            prop_assert_eq!(forward, backward);
        }

        #[test]
        fn code_tokens_disjoint_from_paths(desc in "[a-zA-Z0-9_./ ]{0,120}") {
            let paths: BTreeSet<String> = extract_paths(&desc).into_iter().collect();
            for token in extract_code_tokens(&desc) {
                prop_assert!(!paths.contains(&token));
            }
        }

        #[test]
        fn versions_stable_under_reapplication(desc in "[a-zA-Z0-9,. ]{0,120}") {
            let versions = extract_versions(&desc);
            let rejoined = versions.join(" ");
            prop_assert_eq!(extract_versions(&rejoined), versions);
        }
    }
}
