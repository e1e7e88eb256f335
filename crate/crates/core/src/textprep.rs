//! Deterministic text preprocessing shared by advisory descriptions, commit
//! messages, changed-file lists, and diffs.
//!
//! The pipeline is: tokenize → drop tokens without a letter → drop
//! single-character tokens → drop stopwords → split compound tokens
//! (CamelCase / snake_case / dot.case) → stem → lowercase. Stopwords and the
//! single-character/no-letter rules are applied again after splitting so the
//! output invariants hold regardless of what the splits produce.

use std::collections::BTreeSet;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

mod stem;

pub use stem::stem;

/// Ordered list of normalized tokens produced by [`preprocess`].
///
/// Tokens are lowercase, at least two characters long, contain at least one
/// letter, and are never stopwords.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TokenList(pub Vec<String>);

impl TokenList {
    pub fn tokens(&self) -> &[String] {
        &self.0
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Re-joins the tokens with single spaces.
    pub fn join(&self) -> String {
        self.0.join(" ")
    }
}

static STOPWORDS: OnceLock<BTreeSet<&'static str>> = OnceLock::new();

fn stopwords() -> &'static BTreeSet<&'static str> {
    STOPWORDS.get_or_init(|| {
        include_str!("../resources/stopwords.txt")
            .lines()
            .map(str::trim)
            .filter(|w| !w.is_empty())
            .collect()
    })
}

fn is_stopword(token: &str) -> bool {
    stopwords().contains(token.to_lowercase().as_str())
}

/// Splits raw text into candidate tokens.
///
/// Splits on every character that is not alphanumeric, `_`, `.`, or `/`, so
/// compound identifiers and paths survive as single tokens until
/// [`split_compound`] runs.
fn tokenize(text: &str) -> impl Iterator<Item = &str> {
    text.split(|c: char| !(c.is_alphanumeric() || c == '_' || c == '.' || c == '/'))
        .filter(|t| !t.is_empty())
}

fn has_letter(token: &str) -> bool {
    token.chars().any(|c| c.is_alphabetic())
}

fn char_len_ok(token: &str) -> bool {
    token.chars().take(2).count() > 1
}

/// Splits a compound token into its parts.
///
/// snake_case splits on `_`, dot.case splits on `.`, and CamelCase splits at
/// case boundaries (`TfidfVectorizer` → `Tfidf`, `Vectorizer`; acronym runs
/// split before their last capital, so `XMLParser` → `XML`, `Parser`). A
/// token matching none of the patterns comes back as a singleton.
pub fn split_compound(token: &str) -> Vec<String> {
    let mut out = Vec::new();
    for piece in token.split(['_', '.']) {
        if piece.is_empty() {
            continue;
        }
        split_camel(piece, &mut out);
    }
    if out.is_empty() {
        out.push(token.to_string());
    }
    out
}

/// True when the token has at least one CamelCase boundary.
pub fn has_camel_boundary(token: &str) -> bool {
    let mut pieces = Vec::new();
    split_camel(token, &mut pieces);
    pieces.len() > 1
}

fn split_camel(piece: &str, out: &mut Vec<String>) {
    let chars: Vec<char> = piece.chars().collect();
    let mut start = 0;
    for i in 1..chars.len() {
        let prev = chars[i - 1];
        let cur = chars[i];
        // lower-or-digit followed by upper: "fooBar" | "v2Bar"
        let lower_to_upper = cur.is_uppercase() && (prev.is_lowercase() || prev.is_numeric());
        // end of an acronym run: "XMLParser" splits before the "P"
        let acronym_boundary = cur.is_uppercase()
            && prev.is_uppercase()
            && chars.get(i + 1).is_some_and(|n| n.is_lowercase());
        if lower_to_upper || acronym_boundary {
            out.push(chars[start..i].iter().collect());
            start = i;
        }
    }
    if start < chars.len() {
        out.push(chars[start..].iter().collect());
    }
}

/// Runs the full preprocessing pipeline over raw text.
pub fn preprocess(text: &str) -> TokenList {
    let mut tokens = Vec::new();
    for raw in tokenize(text) {
        if !has_letter(raw) || !char_len_ok(raw) || is_stopword(raw) {
            continue;
        }
        // Paths tokenize as single units; treat "/" as a separator here so
        // each segment goes through compound splitting on its own.
        for segment in raw.split('/').filter(|s| !s.is_empty()) {
            for piece in split_compound(segment) {
                let stemmed = stem(&piece.to_lowercase());
                if has_letter(&stemmed) && char_len_ok(&stemmed) && !is_stopword(&stemmed) {
                    tokens.push(stemmed);
                }
            }
        }
    }
    TokenList(tokens)
}
