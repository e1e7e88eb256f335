//! TF-IDF vectorization and cosine similarity over preprocessed token lists.
//!
//! Conventions: raw term counts, smoothed idf `ln((1+N)/(1+df)) + 1` with `N`
//! the corpus size, L2-normalized vectors. Queries are transformed against
//! the fitted vocabulary, never fitted; query terms outside it are dropped.

use std::collections::BTreeMap;

use crate::textprep::TokenList;

/// Term weights fitted on one document corpus.
#[derive(Debug, Clone)]
pub struct TfidfModel {
    n_docs: usize,
    document_frequency: BTreeMap<String, usize>,
}

impl TfidfModel {
    pub fn fit(docs: &[&TokenList]) -> Self {
        let mut document_frequency: BTreeMap<String, usize> = BTreeMap::new();
        for doc in docs {
            let mut seen: Vec<&String> = doc.0.iter().collect();
            seen.sort();
            seen.dedup();
            for term in seen {
                *document_frequency.entry(term.clone()).or_insert(0) += 1;
            }
        }
        Self {
            n_docs: docs.len(),
            document_frequency,
        }
    }

    fn idf(&self, df: usize) -> f64 {
        ((1.0 + self.n_docs as f64) / (1.0 + df as f64)).ln() + 1.0
    }

    /// L2-normalized sparse vector for a token list. Terms absent from the
    /// fitted vocabulary are dropped; an empty result means a zero vector.
    pub fn transform(&self, tokens: &TokenList) -> BTreeMap<String, f64> {
        let mut counts: BTreeMap<&String, usize> = BTreeMap::new();
        for token in &tokens.0 {
            if self.document_frequency.contains_key(token) {
                *counts.entry(token).or_insert(0) += 1;
            }
        }
        let mut vector: BTreeMap<String, f64> = counts
            .into_iter()
            .map(|(term, tf)| {
                let w = tf as f64 * self.idf(self.document_frequency[term]);
                (term.clone(), w)
            })
            .collect();
        let norm = vector.values().map(|w| w * w).sum::<f64>().sqrt();
        if norm > 0.0 {
            for w in vector.values_mut() {
                *w /= norm;
            }
        }
        vector
    }
}

/// Cosine similarity of two sparse vectors; dot product when both are
/// already L2-normalized. Zero vectors yield 0.
pub fn cosine(a: &BTreeMap<String, f64>, b: &BTreeMap<String, f64>) -> f64 {
    let (small, large) = if a.len() <= b.len() { (a, b) } else { (b, a) };
    small
        .iter()
        .filter_map(|(term, w)| large.get(term).map(|v| w * v))
        .sum()
}

/// Fits a model on `docs` and returns, per document, the cosine similarity
/// against each query.
pub fn corpus_similarities(docs: &[&TokenList], queries: &[&TokenList]) -> Vec<Vec<f64>> {
    let model = TfidfModel::fit(docs);
    let query_vectors: Vec<BTreeMap<String, f64>> =
        queries.iter().map(|q| model.transform(q)).collect();
    docs.iter()
        .map(|doc| {
            let doc_vector = model.transform(doc);
            query_vectors.iter().map(|q| cosine(q, &doc_vector)).collect()
        })
        .collect()
}
