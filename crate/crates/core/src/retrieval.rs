//! Okapi BM25 lexical retrieval, used for API-document retrieval and for
//! selecting goal-similar demonstration examples.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_K1: f64 = 1.2;
pub const DEFAULT_B: f64 = 0.75;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum RetrievalError {
    #[error("duplicate document id {0:?}")]
    DuplicateDocId(String),
}

/// Lowercase and split on any non-alphanumeric character, dropping empties.
pub fn tokenize(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_string)
        .collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct DocEntry {
    id: String,
    term_freqs: BTreeMap<String, usize>,
    len: usize,
}

/// An immutable BM25 index. Queries need no synchronization.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Index {
    docs: Vec<DocEntry>,
    doc_freqs: BTreeMap<String, usize>,
    avg_len: f64,
    k1: f64,
    b: f64,
}

/// Build an index over `(doc_id, text)` pairs with the given BM25 parameters.
pub fn build_index<I, S, T>(corpus: I, k1: f64, b: f64) -> Result<Index, RetrievalError>
where
    I: IntoIterator<Item = (S, T)>,
    S: Into<String>,
    T: AsRef<str>,
{
    let mut docs = Vec::new();
    let mut doc_freqs: BTreeMap<String, usize> = BTreeMap::new();
    let mut seen = std::collections::BTreeSet::new();
    let mut total_len = 0usize;

    for (id, text) in corpus {
        let id = id.into();
        if !seen.insert(id.clone()) {
            return Err(RetrievalError::DuplicateDocId(id));
        }
        let terms = tokenize(text.as_ref());
        let mut term_freqs: BTreeMap<String, usize> = BTreeMap::new();
        for term in &terms {
            *term_freqs.entry(term.clone()).or_insert(0) += 1;
        }
        for term in term_freqs.keys() {
            *doc_freqs.entry(term.clone()).or_insert(0) += 1;
        }
        total_len += terms.len();
        docs.push(DocEntry {
            id,
            term_freqs,
            len: terms.len(),
        });
    }

    let avg_len = if docs.is_empty() {
        0.0
    } else {
        total_len as f64 / docs.len() as f64
    };

    Ok(Index {
        docs,
        doc_freqs,
        avg_len,
        k1,
        b,
    })
}

pub fn build_index_default<I, S, T>(corpus: I) -> Result<Index, RetrievalError>
where
    I: IntoIterator<Item = (S, T)>,
    S: Into<String>,
    T: AsRef<str>,
{
    build_index(corpus, DEFAULT_K1, DEFAULT_B)
}

impl Index {
    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    pub fn doc_freq(&self, term: &str) -> usize {
        self.doc_freqs.get(term).copied().unwrap_or(0)
    }

    pub fn doc_len(&self, index: usize) -> usize {
        self.docs[index].len
    }

    pub fn avg_len(&self) -> f64 {
        self.avg_len
    }

    /// IDF floored at zero so scores stay non-negative.
    fn idf(&self, term: &str) -> f64 {
        let n = self.docs.len() as f64;
        let df = self.doc_freq(term) as f64;
        (((n - df + 0.5) / (df + 0.5)).ln()).max(0.0)
    }

    /// BM25 score of one document for the given query tokens. Duplicate
    /// query tokens contribute once per occurrence.
    pub fn score(&self, doc_index: usize, query_terms: &[String]) -> f64 {
        let doc = &self.docs[doc_index];
        let mut score = 0.0;
        for term in query_terms {
            let tf = doc.term_freqs.get(term).copied().unwrap_or(0);
            if tf == 0 {
                continue;
            }
            let tf = tf as f64;
            let norm = self.k1 * (1.0 - self.b + self.b * doc.len as f64 / self.avg_len);
            score += self.idf(term) * (tf * (self.k1 + 1.0)) / (tf + norm);
        }
        score
    }

    /// Top-k documents by BM25 score, descending, ties broken by ascending
    /// insertion order. Documents sharing no query term are excluded.
    pub fn retrieve(&self, query: &str, k: usize) -> Vec<(String, f64)> {
        if k == 0 || self.docs.is_empty() {
            return Vec::new();
        }
        let query_terms = tokenize(query);
        let mut scored: Vec<(usize, f64)> = self
            .docs
            .iter()
            .enumerate()
            .filter(|(_, doc)| query_terms.iter().any(|t| doc.term_freqs.contains_key(t)))
            .map(|(i, _)| (i, self.score(i, &query_terms)))
            .collect();
        scored.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
        scored
            .into_iter()
            .take(k)
            .map(|(i, s)| (self.docs[i].id.clone(), s))
            .collect()
    }

    /// Like `retrieve` but returning document positions instead of ids.
    pub fn retrieve_indices(&self, query: &str, k: usize) -> Vec<(usize, f64)> {
        if k == 0 || self.docs.is_empty() {
            return Vec::new();
        }
        let query_terms = tokenize(query);
        let mut scored: Vec<(usize, f64)> = self
            .docs
            .iter()
            .enumerate()
            .filter(|(_, doc)| query_terms.iter().any(|t| doc.term_freqs.contains_key(t)))
            .map(|(i, _)| (i, self.score(i, &query_terms)))
            .collect();
        scored.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
        scored.truncate(k);
        scored
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const CORPUS: [&str; 3] = [
        "move robot to position",
        "raise arm by height",
        "current weather in city",
    ];

    fn index() -> Index {
        build_index_default(
            CORPUS
                .iter()
                .enumerate()
                .map(|(i, text)| (format!("d{i}"), *text)),
        )
        .unwrap()
    }

    #[test]
    fn tokenize_rules() {
        assert_eq!(tokenize("Raise the arm!"), vec!["raise", "the", "arm"]);
        assert_eq!(tokenize(""), Vec::<String>::new());
        assert_eq!(
            tokenize("set_min_price(100)"),
            vec!["set", "min", "price", "100"]
        );
    }

    #[test]
    fn statistics_match_hand_count() {
        let idx = index();
        assert_eq!(idx.len(), 3);
        // Every term appears in exactly one document here.
        for term in ["move", "raise", "arm", "weather"] {
            assert_eq!(idx.doc_freq(term), 1, "df({term})");
        }
        assert_eq!(idx.doc_freq("zzz"), 0);
        assert_eq!(idx.doc_len(0), 4);
        assert_eq!(idx.avg_len(), 4.0);
    }

    // Independent brute-force oracle: the Okapi formula evaluated directly.
    fn oracle_score(doc: &str, query: &str, corpus: &[&str], k1: f64, b: f64) -> f64 {
        let n = corpus.len() as f64;
        let avg: f64 = corpus.iter().map(|d| tokenize(d).len() as f64).sum::<f64>() / n;
        let doc_terms = tokenize(doc);
        let mut score = 0.0;
        for q in tokenize(query) {
            let tf = doc_terms.iter().filter(|t| **t == q).count() as f64;
            if tf == 0.0 {
                continue;
            }
            let df = corpus.iter().filter(|d| tokenize(d).contains(&q)).count() as f64;
            let idf = (((n - df + 0.5) / (df + 0.5)).ln()).max(0.0);
            score +=
                idf * tf * (k1 + 1.0) / (tf + k1 * (1.0 - b + b * doc_terms.len() as f64 / avg));
        }
        score
    }

    #[test]
    fn retrieve_matches_brute_force_oracle() {
        let idx = index();
        let query = "raise the arm";
        let results = idx.retrieve(query, 3);
        assert_eq!(results[0].0, "d1", "arm document ranks first");
        for (id, score) in &results {
            let doc_idx: usize = id[1..].parse().unwrap();
            let expected = oracle_score(CORPUS[doc_idx], query, &CORPUS, DEFAULT_K1, DEFAULT_B);
            assert!(
                (score - expected).abs() < 1e-12,
                "{id}: {score} vs {expected}"
            );
        }
    }

    #[test]
    fn zero_overlap_returns_empty() {
        assert!(index().retrieve("quantum flux", 3).is_empty());
    }

    #[test]
    fn k_zero_returns_empty() {
        assert!(index().retrieve("raise the arm", 0).is_empty());
    }

    #[test]
    fn k_larger_than_corpus_returns_scored_docs_only() {
        let results = index().retrieve("raise the arm to position", 10);
        // Only the two documents sharing a term are returned; no padding.
        assert_eq!(results.len(), 2);
    }

    #[test]
    fn empty_corpus_retrieves_nothing() {
        let idx = build_index_default(Vec::<(String, String)>::new()).unwrap();
        assert!(idx.retrieve("anything", 5).is_empty());
    }

    #[test]
    fn duplicate_doc_ids_rejected() {
        let err = build_index_default([("a", "x"), ("a", "y")]).unwrap_err();
        assert_eq!(err, RetrievalError::DuplicateDocId("a".into()));
    }

    #[test]
    fn deterministic_across_rebuilds() {
        let a = index().retrieve("raise the arm", 3);
        let b = index().retrieve("raise the arm", 3);
        assert_eq!(a, b);
    }

    #[test]
    fn ties_break_by_insertion_order() {
        let idx = build_index_default([("a", "same text"), ("b", "same text")]).unwrap();
        let results = idx.retrieve("same", 2);
        assert_eq!(results[0].0, "a");
        assert_eq!(results[1].0, "b");
        assert_eq!(results[0].1, results[1].1);
    }
}

#[cfg(test)]
mod prop_tests {
    use super::*;
    use proptest::prelude::*;

    fn corpus_strategy() -> impl Strategy<Value = Vec<String>> {
        prop::collection::vec("[a-d ]{1,24}", 1..8)
    }

    proptest! {
        #[test]
        fn scores_finite_and_non_negative(corpus in corpus_strategy(), query in "[a-f ]{0,16}") {
            let idx = build_index_default(
                corpus.iter().enumerate().map(|(i, t)| (format!("d{i}"), t.as_str())),
            ).unwrap();
            for (_, score) in idx.retrieve(&query, corpus.len()) {
                prop_assert!(score.is_finite());
                prop_assert!(score >= 0.0);
            }
        }

        // Appending a term that a document contains never lowers that
        // document's score.
        #[test]
        fn adding_a_present_term_never_decreases_score(
            corpus in corpus_strategy(),
            query in "[a-f ]{0,16}",
            doc_pick in any::<prop::sample::Index>(),
        ) {
            let idx = build_index_default(
                corpus.iter().enumerate().map(|(i, t)| (format!("d{i}"), t.as_str())),
            ).unwrap();
            let doc_idx = doc_pick.index(corpus.len());
            let doc_terms = tokenize(&corpus[doc_idx]);
            prop_assume!(!doc_terms.is_empty());
            let added = &doc_terms[0];

            let before = idx.score(doc_idx, &tokenize(&query));
            let extended = format!("{query} {added}");
            let after = idx.score(doc_idx, &tokenize(&extended));
            prop_assert!(after >= before - 1e-12, "{after} < {before}");
        }
    }
}
