//! Okapi BM25 over short texts, one dedicated index per topic.

use std::collections::BTreeMap;

use crate::corpus::{tokenize, CorpusStore, Document};

use super::{QueryString, RetrievalError, ScoredDoc};

/// Inverted index over one topic's member documents.
///
/// Scores use the Okapi formula with Robertson–Spärck-Jones IDF
/// (+0.5 smoothing), floored at zero so very common terms cannot drag a
/// document's score negative.
#[derive(Debug, Clone)]
pub struct Bm25Index {
    topic_id: String,
    docs: BTreeMap<String, Document>,
    /// term -> doc_id -> occurrences
    postings: BTreeMap<String, BTreeMap<String, usize>>,
    doc_lengths: BTreeMap<String, usize>,
    avg_doc_length: f64,
    k1: f64,
    b: f64,
}

impl Bm25Index {
    /// Index the given documents. An empty slice yields an empty index that
    /// retrieves nothing.
    pub fn build(topic_id: &str, docs: &[Document], k1: f64, b: f64) -> Self {
        let mut postings: BTreeMap<String, BTreeMap<String, usize>> = BTreeMap::new();
        let mut doc_lengths = BTreeMap::new();
        let mut by_id = BTreeMap::new();
        for doc in docs {
            let tokens = tokenize(&doc.text);
            doc_lengths.insert(doc.id.clone(), tokens.len());
            for tok in tokens {
                *postings
                    .entry(tok)
                    .or_default()
                    .entry(doc.id.clone())
                    .or_insert(0) += 1;
            }
            by_id.insert(doc.id.clone(), doc.clone());
        }
        let avg_doc_length = if doc_lengths.is_empty() {
            0.0
        } else {
            doc_lengths.values().sum::<usize>() as f64 / doc_lengths.len() as f64
        };
        Self {
            topic_id: topic_id.to_string(),
            docs: by_id,
            postings,
            doc_lengths,
            avg_doc_length,
            k1,
            b,
        }
    }

    pub fn topic_id(&self) -> &str {
        &self.topic_id
    }

    pub fn doc_count(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    pub fn avg_doc_length(&self) -> f64 {
        self.avg_doc_length
    }

    /// Number of documents containing `term`.
    pub fn document_frequency(&self, term: &str) -> usize {
        self.postings.get(term).map_or(0, BTreeMap::len)
    }

    /// BM25 score of one document against the query tokens. Zero when the
    /// document shares no term with the query.
    pub fn score(&self, doc_id: &str, query_tokens: &[String]) -> f64 {
        let n = self.docs.len() as f64;
        let dl = match self.doc_lengths.get(doc_id) {
            Some(l) => *l as f64,
            None => return 0.0,
        };
        let mut total = 0.0;
        for term in query_tokens {
            let Some(per_doc) = self.postings.get(term) else {
                continue;
            };
            let Some(&tf) = per_doc.get(doc_id) else {
                continue;
            };
            let df = per_doc.len() as f64;
            // IDF: ln((N - df + 0.5) / (df + 0.5)), floored at 0
            let idf = ((n - df + 0.5) / (df + 0.5)).ln().max(0.0);
            let tf = tf as f64;
            let norm = self.k1 * (1.0 - self.b + self.b * dl / self.avg_doc_length);
            total += idf * (tf * (self.k1 + 1.0)) / (tf + norm);
        }
        total
    }

    /// Rank the documents sharing at least one term with the query: BM25
    /// score descending, ties by ascending doc id, at most `k` results.
    pub fn retrieve(&self, query_text: &str, k: usize) -> Vec<ScoredDoc> {
        let query_tokens = tokenize(query_text);
        let mut candidates: Vec<&str> = Vec::new();
        for term in &query_tokens {
            if let Some(per_doc) = self.postings.get(term) {
                candidates.extend(per_doc.keys().map(String::as_str));
            }
        }
        candidates.sort_unstable();
        candidates.dedup();
        let mut scored: Vec<ScoredDoc> = candidates
            .into_iter()
            .map(|id| ScoredDoc {
                doc: self.docs[id].clone(),
                score: self.score(id, &query_tokens),
            })
            .collect();
        scored.sort_by(|a, b| {
            b.score
                .partial_cmp(&a.score)
                .unwrap()
                .then_with(|| a.doc.id.cmp(&b.doc.id))
        });
        scored.truncate(k);
        scored
    }
}

/// One BM25 index per topic.
#[derive(Debug, Clone, Default)]
pub struct Bm25Registry {
    indices: BTreeMap<String, Bm25Index>,
    k1: f64,
    b: f64,
}

impl Bm25Registry {
    /// Build one index per topic in the store, each covering exactly that
    /// topic's member documents.
    pub fn build(store: &CorpusStore, k1: f64, b: f64) -> Self {
        let mut indices = BTreeMap::new();
        for topic in store.topics() {
            let docs: Vec<Document> = store
                .topic_documents(&topic.topic_id)
                .into_iter()
                .cloned()
                .collect();
            indices.insert(
                topic.topic_id.clone(),
                Bm25Index::build(&topic.topic_id, &docs, k1, b),
            );
        }
        Self { indices, k1, b }
    }

    pub fn get(&self, topic_id: &str) -> Option<&Bm25Index> {
        self.indices.get(topic_id)
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn params(&self) -> (f64, f64) {
        (self.k1, self.b)
    }

    /// Retrieve from the query's topic index; errors when no index exists
    /// for that topic.
    pub fn retrieve(&self, query: &QueryString, k: usize) -> Result<Vec<ScoredDoc>, RetrievalError> {
        let index = self
            .indices
            .get(&query.topic_id)
            .ok_or_else(|| RetrievalError::UnknownTopic(query.topic_id.clone()))?;
        Ok(index.retrieve(&query.text, k))
    }
}
