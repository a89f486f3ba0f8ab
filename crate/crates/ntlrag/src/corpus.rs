//! Corpus ingestion, normalization, and storage.
//!
//! Two corpora feed the pipeline: short texts (tweets or similar) grouped by
//! topic, and news articles used as a trusted reference. Both are normalized
//! once at ingest so retrieval and prompting always see clean text. Topic
//! clusters carry the keyword lists produced by an upstream topic model and
//! the ids of their member documents.
//!
//! Per-record problems (missing fields, unparseable lines, text that is empty
//! once normalized) skip the record and count it as rejected; duplicate ids
//! and unreadable files abort the ingest.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Which corpus a document belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceKind {
    ShortText,
    News,
}

/// Optional descriptive fields carried by news documents.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DocMetadata {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub title: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub publication_date: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub outlet: Option<String>,
}

impl DocMetadata {
    fn is_empty(&self) -> bool {
        self.title.is_none() && self.publication_date.is_none() && self.outlet.is_none()
    }
}

/// A normalized document from either corpus.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    /// Normalized text, never empty.
    pub text: String,
    pub source_kind: SourceKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metadata: Option<DocMetadata>,
}

/// A topic-model cluster: keyword list plus member short-text ids.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TopicCluster {
    pub topic_id: String,
    /// Lowercase keywords, most representative first.
    pub keywords: Vec<String>,
    /// Ids of the short-text documents assigned to this topic.
    pub member_doc_ids: Vec<String>,
}

/// Counts returned by each ingest call.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestReport {
    pub loaded: usize,
    pub rejected: usize,
}

/// Input format for short-text ingestion.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ShortTextFormat {
    Jsonl,
    Csv,
}

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("duplicate document id `{id}` in {path}")]
    DuplicateDoc { id: String, path: PathBuf },
    #[error("duplicate topic id `{id}` in {path}")]
    DuplicateTopic { id: String, path: PathBuf },
    #[error("unknown short-text format `{0}` (expected `jsonl` or `csv`)")]
    UnknownFormat(String),
}

impl std::str::FromStr for ShortTextFormat {
    type Err = CorpusError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "jsonl" => Ok(Self::Jsonl),
            "csv" => Ok(Self::Csv),
            other => Err(CorpusError::UnknownFormat(other.to_string())),
        }
    }
}

fn url_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?i)(?:https?://|www\.)\S+").unwrap())
}

fn mention_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"@\w+").unwrap())
}

/// Normalize raw text for retrieval and prompting.
///
/// Strips URLs, @-mentions, and `#` characters, lowercases, deletes every
/// remaining character that is neither alphanumeric nor whitespace (so
/// word-internal punctuation merges: "we've" becomes "weve"), collapses
/// whitespace runs to single spaces, and removes leading retweet markers
/// (`rt` tokens). Idempotent; may return an empty string, which callers
/// treat as a rejectable record.
pub fn normalize_text(raw: &str) -> String {
    let s = url_re().replace_all(raw, "");
    let s = mention_re().replace_all(&s, "");
    let s = s.replace('#', "");
    let s = s.to_lowercase();
    let s: String = s
        .chars()
        .filter(|c| c.is_alphanumeric() || c.is_whitespace())
        .collect();
    let mut tokens: Vec<&str> = s.split_whitespace().collect();
    let lead = tokens.iter().take_while(|t| **t == "rt").count();
    tokens.drain(..lead);
    tokens.join(" ")
}

/// Split normalized text into tokens on Unicode whitespace.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace().map(str::to_string).collect()
}

#[derive(Deserialize)]
struct ShortTextRecord {
    #[serde(default)]
    id: Option<String>,
    #[serde(default)]
    text: Option<String>,
    #[serde(default)]
    topic_id: Option<String>,
}

#[derive(Deserialize)]
struct NewsRecord {
    #[serde(default)]
    id: Option<String>,
    #[serde(default)]
    text: Option<String>,
    #[serde(default)]
    title: Option<String>,
    #[serde(default)]
    publication_date: Option<String>,
    #[serde(default)]
    outlet: Option<String>,
}

#[derive(Deserialize)]
struct TopicRecord {
    #[serde(default)]
    topic_id: Option<String>,
    #[serde(default)]
    keywords: Option<Vec<String>>,
}

#[derive(Serialize)]
struct ShortTextOut<'a> {
    id: &'a str,
    text: &'a str,
    topic_id: &'a str,
}

#[derive(Serialize)]
struct TopicOut<'a> {
    topic_id: &'a str,
    keywords: &'a [String],
}

/// In-memory store for both corpora and the topic clusters.
///
/// Built up by the `ingest_*` methods, then passed immutably to retrieval
/// and the pipeline. Iteration order is the lexicographic id order.
#[derive(Debug, Default, Clone)]
pub struct CorpusStore {
    short_texts: BTreeMap<String, Document>,
    news: BTreeMap<String, Document>,
    topics: BTreeMap<String, TopicCluster>,
    /// Maps short-text id to its topic id.
    assignments: BTreeMap<String, String>,
    auto_short_seq: usize,
    auto_news_seq: usize,
}

impl CorpusStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Load short texts from a JSONL or CSV file.
    ///
    /// Each record needs `text` and `topic_id`; `id` is optional and
    /// auto-assigned (`s0`, `s1`, ...) when missing. Records without the
    /// mandatory fields, or whose text normalizes to nothing, are rejected.
    pub fn ingest_short_texts(
        &mut self,
        path: &Path,
        format: ShortTextFormat,
    ) -> Result<IngestReport, CorpusError> {
        let records = match format {
            ShortTextFormat::Jsonl => read_jsonl_records::<ShortTextRecord>(path)?,
            ShortTextFormat::Csv => read_csv_records(path)?,
        };
        let mut report = IngestReport::default();
        for (line, rec) in records {
            let rec = match rec {
                Some(r) => r,
                None => {
                    report.rejected += 1;
                    continue;
                }
            };
            let (text, topic_id) = match (rec.text, rec.topic_id) {
                (Some(t), Some(id)) if !id.trim().is_empty() => (t, id),
                _ => {
                    log::warn!("{}:{line}: short text missing text or topic_id, skipped", path.display());
                    report.rejected += 1;
                    continue;
                }
            };
            let normalized = normalize_text(&text);
            if normalized.is_empty() {
                log::warn!("{}:{line}: text empty after normalization, skipped", path.display());
                report.rejected += 1;
                continue;
            }
            let id = match rec.id.filter(|s| !s.trim().is_empty()) {
                Some(id) => id,
                None => {
                    let id = format!("s{}", self.auto_short_seq);
                    self.auto_short_seq += 1;
                    id
                }
            };
            if self.short_texts.contains_key(&id) {
                return Err(CorpusError::DuplicateDoc { id, path: path.to_path_buf() });
            }
            let doc = Document {
                id: id.clone(),
                text: normalized,
                source_kind: SourceKind::ShortText,
                metadata: None,
            };
            self.topics
                .entry(topic_id.clone())
                .or_insert_with(|| TopicCluster {
                    topic_id: topic_id.clone(),
                    keywords: Vec::new(),
                    member_doc_ids: Vec::new(),
                })
                .member_doc_ids
                .push(id.clone());
            self.assignments.insert(id.clone(), topic_id);
            self.short_texts.insert(id, doc);
            report.loaded += 1;
        }
        Ok(report)
    }

    /// Load news articles from a JSONL file.
    ///
    /// Uses `text` when present, falling back to `title` for records that
    /// carry only a headline. Records with neither are rejected.
    pub fn ingest_news(&mut self, path: &Path) -> Result<IngestReport, CorpusError> {
        let records = read_jsonl_records::<NewsRecord>(path)?;
        let mut report = IngestReport::default();
        for (line, rec) in records {
            let rec = match rec {
                Some(r) => r,
                None => {
                    report.rejected += 1;
                    continue;
                }
            };
            let body = rec.text.as_deref().map(normalize_text).unwrap_or_default();
            let text = if body.is_empty() {
                rec.title.as_deref().map(normalize_text).unwrap_or_default()
            } else {
                body
            };
            if text.is_empty() {
                log::warn!("{}:{line}: news record has no usable text or title, skipped", path.display());
                report.rejected += 1;
                continue;
            }
            let id = match rec.id.filter(|s| !s.trim().is_empty()) {
                Some(id) => id,
                None => {
                    let id = format!("n{}", self.auto_news_seq);
                    self.auto_news_seq += 1;
                    id
                }
            };
            if self.news.contains_key(&id) {
                return Err(CorpusError::DuplicateDoc { id, path: path.to_path_buf() });
            }
            let metadata = DocMetadata {
                title: rec.title,
                publication_date: rec.publication_date,
                outlet: rec.outlet,
            };
            let doc = Document {
                id: id.clone(),
                text,
                source_kind: SourceKind::News,
                metadata: (!metadata.is_empty()).then_some(metadata),
            };
            self.news.insert(id, doc);
            report.loaded += 1;
        }
        Ok(report)
    }

    /// Load topic keyword lists from a JSONL file.
    ///
    /// Each record needs `topic_id` and a non-empty `keywords` array.
    /// Keywords are lowercased; blank entries are dropped. Merges into
    /// clusters already created by short-text ingestion; a topic whose
    /// keywords were already set is a duplicate.
    pub fn ingest_topics(&mut self, path: &Path) -> Result<IngestReport, CorpusError> {
        let records = read_jsonl_records::<TopicRecord>(path)?;
        let mut report = IngestReport::default();
        for (line, rec) in records {
            let rec = match rec {
                Some(r) => r,
                None => {
                    report.rejected += 1;
                    continue;
                }
            };
            let topic_id = match rec.topic_id.filter(|s| !s.trim().is_empty()) {
                Some(id) => id,
                None => {
                    log::warn!("{}:{line}: topic record missing topic_id, skipped", path.display());
                    report.rejected += 1;
                    continue;
                }
            };
            let keywords: Vec<String> = rec
                .keywords
                .unwrap_or_default()
                .iter()
                .map(|k| k.trim().to_lowercase())
                .filter(|k| !k.is_empty())
                .collect();
            if keywords.is_empty() {
                log::warn!("{}:{line}: topic `{topic_id}` has no keywords, skipped", path.display());
                report.rejected += 1;
                continue;
            }
            let entry = self.topics.entry(topic_id.clone()).or_insert_with(|| TopicCluster {
                topic_id: topic_id.clone(),
                keywords: Vec::new(),
                member_doc_ids: Vec::new(),
            });
            if !entry.keywords.is_empty() {
                return Err(CorpusError::DuplicateTopic { id: topic_id, path: path.to_path_buf() });
            }
            entry.keywords = keywords;
            report.loaded += 1;
        }
        Ok(report)
    }

    pub fn short_text(&self, id: &str) -> Option<&Document> {
        self.short_texts.get(id)
    }

    pub fn news_doc(&self, id: &str) -> Option<&Document> {
        self.news.get(id)
    }

    /// Look up a document in either corpus.
    pub fn document(&self, id: &str) -> Option<&Document> {
        self.short_texts.get(id).or_else(|| self.news.get(id))
    }

    pub fn topic(&self, topic_id: &str) -> Option<&TopicCluster> {
        self.topics.get(topic_id)
    }

    /// Topic id a short-text document was assigned to.
    pub fn topic_of(&self, doc_id: &str) -> Option<&str> {
        self.assignments.get(doc_id).map(String::as_str)
    }

    pub fn short_texts(&self) -> impl Iterator<Item = &Document> {
        self.short_texts.values()
    }

    pub fn news(&self) -> impl Iterator<Item = &Document> {
        self.news.values()
    }

    pub fn topics(&self) -> impl Iterator<Item = &TopicCluster> {
        self.topics.values()
    }

    /// Member documents of a topic, in insertion order.
    pub fn topic_documents(&self, topic_id: &str) -> Vec<&Document> {
        self.topic(topic_id)
            .map(|t| {
                t.member_doc_ids
                    .iter()
                    .filter_map(|id| self.short_texts.get(id))
                    .collect()
            })
            .unwrap_or_default()
    }

    pub fn short_text_count(&self) -> usize {
        self.short_texts.len()
    }

    pub fn news_count(&self) -> usize {
        self.news.len()
    }

    pub fn topic_count(&self) -> usize {
        self.topics.len()
    }

    /// Write the store back out as three JSONL files in `dir`:
    /// `short_texts.jsonl`, `news.jsonl`, `topics.jsonl`. Re-ingesting the
    /// written files reproduces the store (normalization is idempotent).
    pub fn save_jsonl_dir(&self, dir: &Path) -> Result<(), CorpusError> {
        std::fs::create_dir_all(dir).map_err(|e| CorpusError::Io { path: dir.to_path_buf(), source: e })?;
        let write = |name: &str, lines: Vec<String>| -> Result<(), CorpusError> {
            let path = dir.join(name);
            let mut f = File::create(&path).map_err(|e| CorpusError::Io { path: path.clone(), source: e })?;
            for line in lines {
                writeln!(f, "{line}").map_err(|e| CorpusError::Io { path: path.clone(), source: e })?;
            }
            Ok(())
        };
        let shorts = self
            .short_texts
            .values()
            .map(|d| {
                let topic_id = self.topic_of(&d.id).unwrap_or("");
                serde_json::to_string(&ShortTextOut { id: &d.id, text: &d.text, topic_id }).unwrap()
            })
            .collect();
        write("short_texts.jsonl", shorts)?;
        let news = self
            .news
            .values()
            .map(|d| {
                let mut v = serde_json::json!({ "id": d.id, "text": d.text });
                if let Some(m) = &d.metadata {
                    let obj = v.as_object_mut().unwrap();
                    if let Some(t) = &m.title {
                        obj.insert("title".into(), t.clone().into());
                    }
                    if let Some(p) = &m.publication_date {
                        obj.insert("publication_date".into(), p.clone().into());
                    }
                    if let Some(o) = &m.outlet {
                        obj.insert("outlet".into(), o.clone().into());
                    }
                }
                v.to_string()
            })
            .collect();
        write("news.jsonl", news)?;
        let topics = self
            .topics
            .values()
            .filter(|t| !t.keywords.is_empty())
            .map(|t| serde_json::to_string(&TopicOut { topic_id: &t.topic_id, keywords: &t.keywords }).unwrap())
            .collect();
        write("topics.jsonl", topics)?;
        Ok(())
    }

    /// Rebuild a store from a directory written by [`save_jsonl_dir`].
    /// Missing files are treated as empty corpora.
    ///
    /// [`save_jsonl_dir`]: CorpusStore::save_jsonl_dir
    pub fn load_jsonl_dir(dir: &Path) -> Result<Self, CorpusError> {
        let mut store = Self::new();
        let shorts = dir.join("short_texts.jsonl");
        if shorts.is_file() {
            store.ingest_short_texts(&shorts, ShortTextFormat::Jsonl)?;
        }
        let news = dir.join("news.jsonl");
        if news.is_file() {
            store.ingest_news(&news)?;
        }
        let topics = dir.join("topics.jsonl");
        if topics.is_file() {
            store.ingest_topics(&topics)?;
        }
        Ok(store)
    }
}

/// Read a JSONL file, yielding `(line_number, Some(record))` per parseable
/// line and `(line_number, None)` per malformed one. Blank lines are skipped.
fn read_jsonl_records<T: serde::de::DeserializeOwned>(
    path: &Path,
) -> Result<Vec<(usize, Option<T>)>, CorpusError> {
    let file = File::open(path).map_err(|e| CorpusError::Io { path: path.to_path_buf(), source: e })?;
    let reader = BufReader::new(file);
    let mut out = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| CorpusError::Io { path: path.to_path_buf(), source: e })?;
        if line.trim().is_empty() {
            continue;
        }
        let lineno = idx + 1;
        match serde_json::from_str::<T>(&line) {
            Ok(rec) => out.push((lineno, Some(rec))),
            Err(e) => {
                log::warn!("{}:{lineno}: malformed JSON, skipped: {e}", path.display());
                out.push((lineno, None));
            }
        }
    }
    Ok(out)
}

/// Read a headered CSV file of short-text records (`id`, `text`, `topic_id`;
/// `id` optional). Rows that fail to parse yield `None`.
fn read_csv_records(path: &Path) -> Result<Vec<(usize, Option<ShortTextRecord>)>, CorpusError> {
    let file = File::open(path).map_err(|e| CorpusError::Io { path: path.to_path_buf(), source: e })?;
    let mut reader = csv::ReaderBuilder::new().flexible(true).from_reader(BufReader::new(file));
    let headers = reader
        .headers()
        .map_err(|e| CorpusError::Io {
            path: path.to_path_buf(),
            source: std::io::Error::new(std::io::ErrorKind::InvalidData, e),
        })?
        .clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let (id_col, text_col, topic_col) = (col("id"), col("text"), col("topic_id"));
    let mut out = Vec::new();
    for (idx, row) in reader.records().enumerate() {
        let lineno = idx + 2;
        match row {
            Ok(row) => {
                let get = |c: Option<usize>| c.and_then(|i| row.get(i)).map(str::to_string);
                out.push((
                    lineno,
                    Some(ShortTextRecord {
                        id: get(id_col),
                        text: get(text_col),
                        topic_id: get(topic_col),
                    }),
                ));
            }
            Err(e) => {
                log::warn!("{}:{lineno}: malformed CSV row, skipped: {e}", path.display());
                out.push((lineno, None));
            }
        }
    }
    Ok(out)
}
