//! Dual retrieval: per-topic BM25 over short texts and exact cosine search
//! over news, plus the query builder and context assembly that feed the
//! pipeline.
//!
//! A topic's keyword list becomes a single query string. The same query runs
//! against the topic's dedicated BM25 index (giving D_S) and against the
//! shared news vector index (giving D_N); the two ordered halves are kept
//! separate in a [`ContextBundle`] because extraction sees only D_S while
//! validation sees the concatenation D.

mod bm25;
mod vector;

pub use bm25::{Bm25Index, Bm25Registry};
pub use vector::{cosine_similarity, VectorIndex};

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::BackendError;
use crate::corpus::{Document, TopicCluster};

/// Space-joined topic keywords, shared by both retrievers.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryString {
    pub topic_id: String,
    pub text: String,
}

/// A retrieved document with its retrieval score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredDoc {
    pub doc: Document,
    pub score: f64,
}

/// The retrieval result for one topic: D_S, D_N, and their concatenation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextBundle {
    pub topic_id: String,
    /// Short-text retrieval result (D_S), ranked.
    pub short_text_docs: Vec<ScoredDoc>,
    /// News retrieval result (D_N), ranked.
    pub news_docs: Vec<ScoredDoc>,
}

impl ContextBundle {
    /// Combined context D: short texts followed by news, order preserved.
    pub fn combined(&self) -> Vec<&Document> {
        self.short_text_docs
            .iter()
            .chain(self.news_docs.iter())
            .map(|s| &s.doc)
            .collect()
    }

    /// True when both halves are empty; the pipeline fails such topics.
    pub fn is_empty(&self) -> bool {
        self.short_text_docs.is_empty() && self.news_docs.is_empty()
    }
}

#[derive(Debug, Error)]
pub enum RetrievalError {
    #[error("topic `{0}` has no keywords to build a query from")]
    EmptyKeywords(String),
    #[error("no BM25 index for topic `{0}`")]
    UnknownTopic(String),
    #[error("embedding backend failed for `{doc_id}`: {source}")]
    Embedding {
        doc_id: String,
        #[source]
        source: BackendError,
    },
    #[error("embedding dimension mismatch for `{doc_id}`: expected {expected}, got {got}")]
    DimensionMismatch {
        doc_id: String,
        expected: usize,
        got: usize,
    },
    #[error("embedding for `{doc_id}` contains a non-finite component")]
    NonFiniteEmbedding { doc_id: String },
    #[error("cannot build a vector index from zero documents")]
    EmptyNewsCorpus,
    #[error("vector index file {path}: {reason}")]
    BadIndexFile { path: PathBuf, reason: String },
    #[error("vector index entry `{0}` has no matching document in the corpus")]
    MissingDoc(String),
    #[error("cannot access {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Join a topic's keywords into the shared query string.
pub fn build_query(topic: &TopicCluster) -> Result<QueryString, RetrievalError> {
    if topic.keywords.is_empty() {
        return Err(RetrievalError::EmptyKeywords(topic.topic_id.clone()));
    }
    Ok(QueryString {
        topic_id: topic.topic_id.clone(),
        text: topic.keywords.join(" "),
    })
}

/// Bundle the two retrieval halves for one topic.
pub fn assemble_context(
    topic_id: &str,
    short: Vec<ScoredDoc>,
    news: Vec<ScoredDoc>,
) -> ContextBundle {
    ContextBundle {
        topic_id: topic_id.to_string(),
        short_text_docs: short,
        news_docs: news,
    }
}
