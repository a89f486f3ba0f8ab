//! Exact cosine-similarity search over embedded news documents.
//!
//! The index is a flat list of (doc id, vector) entries scanned exhaustively
//! at query time; no approximate structure is involved, so results are
//! reproducible and oracle-testable. On disk the index is a small binary
//! file: a magic line, a JSON header (dimension, count, embedder name), then
//! little-endian f32 vectors.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::backend::EmbeddingBackend;
use crate::corpus::{CorpusStore, Document};

use super::{QueryString, RetrievalError, ScoredDoc};

const MAGIC: &[u8] = b"NTLVIDX1\n";

#[derive(serde::Serialize, serde::Deserialize)]
struct Header {
    dimension: usize,
    count: usize,
    embedder: String,
}

/// Cosine similarity with f64 accumulation; 0.0 when either vector has zero
/// norm. Symmetric, range [-1, 1].
pub fn cosine_similarity(a: &[f32], b: &[f32]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut dot = 0.0f64;
    let mut na = 0.0f64;
    let mut nb = 0.0f64;
    for (x, y) in a.iter().zip(b) {
        let (x, y) = (*x as f64, *y as f64);
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    (dot / (na.sqrt() * nb.sqrt())).clamp(-1.0, 1.0)
}

/// Embedded document collection with exhaustive-scan retrieval.
#[derive(Debug, Clone)]
pub struct VectorIndex {
    dimension: usize,
    embedder_name: String,
    /// Insertion order, preserved through persistence.
    entries: Vec<(String, Vec<f32>)>,
    docs: BTreeMap<String, Document>,
}

impl VectorIndex {
    /// Embed every document and collect the entries. All vectors must match
    /// the embedder's declared dimension and be finite.
    pub fn build(docs: &[Document], embedder: &dyn EmbeddingBackend) -> Result<Self, RetrievalError> {
        if docs.is_empty() {
            return Err(RetrievalError::EmptyNewsCorpus);
        }
        let dimension = embedder.dimension();
        let mut entries = Vec::with_capacity(docs.len());
        let mut by_id = BTreeMap::new();
        for doc in docs {
            let vector = embedder.embed(&doc.text).map_err(|source| RetrievalError::Embedding {
                doc_id: doc.id.clone(),
                source,
            })?;
            if vector.len() != dimension {
                return Err(RetrievalError::DimensionMismatch {
                    doc_id: doc.id.clone(),
                    expected: dimension,
                    got: vector.len(),
                });
            }
            if vector.iter().any(|v| !v.is_finite()) {
                return Err(RetrievalError::NonFiniteEmbedding { doc_id: doc.id.clone() });
            }
            entries.push((doc.id.clone(), vector));
            by_id.insert(doc.id.clone(), doc.clone());
        }
        Ok(Self {
            dimension,
            embedder_name: embedder.model_name().to_string(),
            entries,
            docs: by_id,
        })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn embedder_name(&self) -> &str {
        &self.embedder_name
    }

    pub fn entries(&self) -> &[(String, Vec<f32>)] {
        &self.entries
    }

    /// Top-k documents by cosine similarity to the embedded query,
    /// descending, ties by ascending doc id.
    pub fn retrieve(
        &self,
        query: &QueryString,
        embedder: &dyn EmbeddingBackend,
        k: usize,
    ) -> Result<Vec<ScoredDoc>, RetrievalError> {
        if self.entries.is_empty() {
            return Ok(Vec::new());
        }
        let qvec = embedder.embed(&query.text).map_err(|source| RetrievalError::Embedding {
            doc_id: format!("query:{}", query.topic_id),
            source,
        })?;
        if qvec.len() != self.dimension {
            return Err(RetrievalError::DimensionMismatch {
                doc_id: format!("query:{}", query.topic_id),
                expected: self.dimension,
                got: qvec.len(),
            });
        }
        let mut scored: Vec<ScoredDoc> = self
            .entries
            .iter()
            .map(|(id, vec)| {
                let doc = self.docs.get(id).cloned().unwrap_or_else(|| Document {
                    id: id.clone(),
                    text: String::new(),
                    source_kind: crate::corpus::SourceKind::News,
                    metadata: None,
                });
                ScoredDoc { doc, score: cosine_similarity(&qvec, vec) }
            })
            .collect();
        scored.sort_by(|a, b| {
            b.score
                .partial_cmp(&a.score)
                .unwrap()
                .then_with(|| a.doc.id.cmp(&b.doc.id))
        });
        scored.truncate(k);
        Ok(scored)
    }

    /// Write the index to `path` (overwriting), entry order preserved.
    pub fn save(&self, path: &Path) -> Result<(), RetrievalError> {
        let io_err = |source| RetrievalError::Io { path: path.to_path_buf(), source };
        let file = File::create(path).map_err(io_err)?;
        let mut w = BufWriter::new(file);
        w.write_all(MAGIC).map_err(io_err)?;
        let header = Header {
            dimension: self.dimension,
            count: self.entries.len(),
            embedder: self.embedder_name.clone(),
        };
        serde_json::to_writer(&mut w, &header)
            .map_err(|e| RetrievalError::BadIndexFile { path: path.to_path_buf(), reason: e.to_string() })?;
        w.write_all(b"\n").map_err(io_err)?;
        for (id, vec) in &self.entries {
            let id_bytes = id.as_bytes();
            w.write_all(&(id_bytes.len() as u32).to_le_bytes()).map_err(io_err)?;
            w.write_all(id_bytes).map_err(io_err)?;
            for v in vec {
                w.write_all(&v.to_le_bytes()).map_err(io_err)?;
            }
        }
        w.flush().map_err(io_err)
    }

    /// Read an index back and re-attach document texts from the store.
    pub fn load(path: &Path, store: &CorpusStore) -> Result<Self, RetrievalError> {
        let bad = |reason: &str| RetrievalError::BadIndexFile {
            path: path.to_path_buf(),
            reason: reason.to_string(),
        };
        let bytes = std::fs::read(path).map_err(|source| RetrievalError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let rest = bytes.strip_prefix(MAGIC).ok_or_else(|| bad("bad magic"))?;
        let newline = rest
            .iter()
            .position(|&c| c == b'\n')
            .ok_or_else(|| bad("missing header line"))?;
        let header: Header = serde_json::from_slice(&rest[..newline])
            .map_err(|e| RetrievalError::BadIndexFile { path: path.to_path_buf(), reason: format!("bad header: {e}") })?;
        let mut cursor = &rest[newline + 1..];
        let mut entries = Vec::with_capacity(header.count);
        let mut docs = BTreeMap::new();
        for _ in 0..header.count {
            if cursor.len() < 4 {
                return Err(bad("truncated entry length"));
            }
            let id_len = u32::from_le_bytes(cursor[..4].try_into().unwrap()) as usize;
            cursor = &cursor[4..];
            if cursor.len() < id_len {
                return Err(bad("truncated id"));
            }
            let id = std::str::from_utf8(&cursor[..id_len])
                .map_err(|_| bad("id is not UTF-8"))?
                .to_string();
            cursor = &cursor[id_len..];
            let vec_bytes = header.dimension * 4;
            if cursor.len() < vec_bytes {
                return Err(bad("truncated vector"));
            }
            let vector: Vec<f32> = cursor[..vec_bytes]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            cursor = &cursor[vec_bytes..];
            let doc = store
                .document(&id)
                .cloned()
                .ok_or_else(|| RetrievalError::MissingDoc(id.clone()))?;
            docs.insert(id.clone(), doc);
            entries.push((id, vector));
        }
        if !cursor.is_empty() {
            return Err(bad("trailing bytes after last entry"));
        }
        Ok(Self {
            dimension: header.dimension,
            embedder_name: header.embedder,
            entries,
            docs,
        })
    }
}
