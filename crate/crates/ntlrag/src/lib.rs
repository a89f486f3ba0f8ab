//! Narrative topic labels for short-text clusters.
//!
//! `ntlrag` turns topic-model output (per-topic keyword lists plus the member
//! short-text documents) into structured *narrative labels*: an actor, an
//! action, an event, and a one-sentence description. Each label is extracted
//! by a pluggable chat backend from retrieved short texts, fact-checked
//! against a combined context of short texts and trusted news, and refined
//! until the validator approves it or a retry cap is hit.
//!
//! # Pipeline
//!
//! ```text
//! keywords ──► query ──► BM25 over topic tweets ──► D_S ─┐
//!                   └──► cosine over news corpus ──► D_N ─┤
//!                                                         ▼
//!                 extract(D_S) ──► validate(narrative, D_S ++ D_N)
//!                        ▲                   │ refine
//!                        └───────────────────┘   (capped)
//! ```
//!
//! # Modules
//!
//! - [`corpus`] — JSONL/CSV ingestion, text normalization, the document store
//! - [`retrieval`] — per-topic BM25, exact cosine top-k over news, context assembly
//! - [`backend`] — chat/embedding contracts, an HTTP client for local model
//!   servers, and a deterministic scripted mock for offline runs
//! - [`narrative`] — the five-field label schema, verdict parsing, prompt templates
//! - [`pipeline`] — the retrieve/extract/validate/refine loop and run reports
//! - [`evaluation`] — Krippendorff's alpha and label-preference statistics
//! - [`cli`] — the `ntlrag` binary: `ingest`, `index`, `run`, `eval`
//!
//! # Examples
//!
//! Each major capability has a runnable example:
//!
//! ```bash
//! cargo run -p ntlrag --example ingest_corpus      # ingestion + normalization
//! cargo run -p ntlrag --example bm25_topics        # per-topic lexical retrieval
//! cargo run -p ntlrag --example news_vector_search # embed, persist, and query news
//! cargo run -p ntlrag --example prompt_rendering   # extraction/validation prompts
//! cargo run -p ntlrag --example scripted_pipeline  # full loop on a scripted backend
//! cargo run -p ntlrag --example refine_cap         # bounded refine loop behavior
//! cargo run -p ntlrag --example rater_agreement    # alpha + preference statistics
//! cargo run -p ntlrag --example live_server        # against a running model server
//! ```

pub mod backend;
pub mod cli;
pub mod corpus;
pub mod evaluation;
pub mod narrative;
pub mod pipeline;
pub mod retrieval;

pub use corpus::{CorpusStore, Document, SourceKind, TopicCluster};
pub use narrative::{NarrativeSchema, ValidationVerdict, VerdictLabel};
pub use pipeline::{Pipeline, PipelineConfig, RunReport, TopicRunRecord};
