//! Command-line front end: `ingest`, `index`, `run`, and `eval`.
//!
//! Settings resolve with a fixed precedence: command-line flags beat the
//! JSON config file (`--config`), which beats `NTLRAG_*` environment
//! variables, which beat built-in defaults. Logs go to stderr; machine
//! output goes to files under the chosen output directory.
//!
//! Exit codes: 0 success, 2 usage or input error, 3 backend or transport
//! error (including failed topics in `run`), 4 internal error.

use std::ffi::OsString;
use std::fmt;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::backend::http::{
    HttpChatBackend, HttpEmbeddingBackend, DEFAULT_BASE_URL, DEFAULT_CHAT_MODEL,
    DEFAULT_EMBED_MODEL,
};
use crate::backend::mock::{HashEmbedder, ScriptedMock};
use crate::backend::{
    BackendError, ChatProvider, EmbeddingBackend, SharedChatProvider, ENV_EMBED_MODEL,
    ENV_LLM_MODEL, ENV_LLM_URL, ENV_TIMEOUT_SECS,
};
use crate::corpus::{CorpusError, CorpusStore, IngestReport, ShortTextFormat};
use crate::evaluation::{
    evaluate_dataset, read_ratings_csv, render_eval_table, AlphaMetric, DatasetEval, EvalError,
};
use crate::narrative::{PromptError, PromptTemplate, TemplateName};
use crate::pipeline::{FailPolicy, Pipeline, PipelineConfig};
use crate::retrieval::{Bm25Registry, RetrievalError, VectorIndex};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_BACKEND: i32 = 3;
pub const EXIT_INTERNAL: i32 = 4;

/// Failure carrying the process exit code it maps to.
#[derive(Debug)]
pub struct CliError {
    pub exit_code: i32,
    pub message: String,
}

impl CliError {
    fn usage(message: impl Into<String>) -> Self {
        Self { exit_code: EXIT_USAGE, message: message.into() }
    }

    fn backend(message: impl Into<String>) -> Self {
        Self { exit_code: EXIT_BACKEND, message: message.into() }
    }

    fn internal(message: impl Into<String>) -> Self {
        Self { exit_code: EXIT_INTERNAL, message: message.into() }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for CliError {}

impl From<CorpusError> for CliError {
    fn from(e: CorpusError) -> Self {
        CliError::usage(e.to_string())
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        CliError::usage(e.to_string())
    }
}

impl From<PromptError> for CliError {
    fn from(e: PromptError) -> Self {
        CliError::usage(e.to_string())
    }
}

impl From<BackendError> for CliError {
    fn from(e: BackendError) -> Self {
        match e {
            BackendError::BadScript(_) => CliError::usage(e.to_string()),
            _ => CliError::backend(e.to_string()),
        }
    }
}

impl From<RetrievalError> for CliError {
    fn from(e: RetrievalError) -> Self {
        match e {
            RetrievalError::Embedding { .. } => CliError::backend(e.to_string()),
            _ => CliError::usage(e.to_string()),
        }
    }
}

#[derive(Parser, Debug)]
#[command(
    name = "ntlrag",
    version,
    about = "Narrative labels for topic clusters via dual-corpus retrieval, extraction, and validated refinement"
)]
pub struct Cli {
    /// JSON config file; flags override its values, it overrides NTLRAG_* env vars.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Load and normalize the corpora, snapshot them, and write a manifest.
    Ingest(IngestArgs),
    /// Build the per-topic BM25 summary and the news vector index.
    Index(IndexArgs),
    /// Run retrieval, extraction, validation, and refinement over all topics.
    Run(Box<RunArgs>),
    /// Compute agreement and preference statistics over rating CSV files.
    Eval(EvalArgs),
}

#[derive(Args, Debug, Clone, Default)]
pub struct InputArgs {
    /// Short-text corpus file.
    #[arg(long, value_name = "FILE")]
    pub short_texts: Option<PathBuf>,
    /// Short-text file format: jsonl or csv.
    #[arg(long, value_name = "FMT")]
    pub short_format: Option<String>,
    /// Topic clusters JSONL (topic_id, keywords, member_doc_ids).
    #[arg(long, value_name = "FILE")]
    pub topics: Option<PathBuf>,
    /// News corpus JSONL.
    #[arg(long, value_name = "FILE")]
    pub news: Option<PathBuf>,
}

#[derive(Args, Debug, Clone, Default)]
pub struct ConnArgs {
    /// Base URL of the model server.
    #[arg(long, value_name = "URL")]
    pub llm_url: Option<String>,
    /// Per-request timeout in seconds.
    #[arg(long, value_name = "SECS")]
    pub timeout_secs: Option<u64>,
}

#[derive(Args, Debug, Clone, Default)]
pub struct EmbedderArgs {
    /// Embedding source: mock, http, or none.
    #[arg(long, value_name = "KIND")]
    pub embedder: Option<String>,
    /// Embedding model name for the http embedder.
    #[arg(long, value_name = "NAME")]
    pub embed_model: Option<String>,
    /// Vector dimension of the deterministic mock embedder.
    #[arg(long, value_name = "N")]
    pub mock_embed_dim: Option<usize>,
}

#[derive(Args, Debug, Clone, Default)]
pub struct ChatArgs {
    /// Chat backend: mock or http.
    #[arg(long, value_name = "KIND")]
    pub backend: Option<String>,
    /// Scripted responses file for the mock backend.
    #[arg(long, value_name = "FILE")]
    pub script: Option<PathBuf>,
    /// Chat model name for the http backend.
    #[arg(long, value_name = "NAME")]
    pub llm_model: Option<String>,
}

#[derive(Args, Debug)]
pub struct IngestArgs {
    #[command(flatten)]
    pub inputs: InputArgs,
    /// Directory for the manifest and the normalized corpus snapshot.
    #[arg(long, value_name = "DIR")]
    pub out_dir: Option<PathBuf>,
    /// Fail unless a news corpus is supplied and loadable.
    #[arg(long)]
    pub require_news: bool,
}

#[derive(Args, Debug)]
pub struct IndexArgs {
    #[command(flatten)]
    pub inputs: InputArgs,
    /// Directory for the index files.
    #[arg(long, value_name = "DIR")]
    pub index_dir: Option<PathBuf>,
    #[command(flatten)]
    pub embed: EmbedderArgs,
    #[command(flatten)]
    pub conn: ConnArgs,
}

#[derive(Args, Debug)]
pub struct RunArgs {
    #[command(flatten)]
    pub inputs: InputArgs,
    /// Directory holding a prebuilt news vector index to reuse.
    #[arg(long, value_name = "DIR")]
    pub index_dir: Option<PathBuf>,
    /// Directory for run reports and narratives.
    #[arg(long, value_name = "DIR")]
    pub out_dir: Option<PathBuf>,
    #[command(flatten)]
    pub chat: ChatArgs,
    #[command(flatten)]
    pub embed: EmbedderArgs,
    #[command(flatten)]
    pub conn: ConnArgs,
    /// Retrieval depth over each topic's short texts.
    #[arg(long, value_name = "N")]
    pub k_short: Option<usize>,
    /// Retrieval depth over the news corpus.
    #[arg(long, value_name = "N")]
    pub k_news: Option<usize>,
    /// Refine iterations allowed after the first extraction (at least 1).
    #[arg(long, value_name = "N")]
    pub max_refines: Option<usize>,
    /// Concurrent topic workers.
    #[arg(long, value_name = "N")]
    pub parallelism: Option<usize>,
    /// Retry budget per backend call.
    #[arg(long, value_name = "N")]
    pub max_retries: Option<u32>,
    #[arg(long, value_name = "X")]
    pub bm25_k1: Option<f64>,
    #[arg(long, value_name = "X")]
    pub bm25_b: Option<f64>,
    /// What to emit at the refine cap: emit_unvalidated or drop.
    #[arg(long, value_name = "POLICY")]
    pub fail_policy: Option<String>,
    /// Record per-topic wall-clock in the report (breaks byte-for-byte
    /// report reproducibility).
    #[arg(long)]
    pub timings: bool,
    /// Override the extraction prompt template file.
    #[arg(long, value_name = "FILE")]
    pub extract_prompt: Option<PathBuf>,
    /// Override the validation prompt template file.
    #[arg(long, value_name = "FILE")]
    pub validate_prompt: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// Rating CSV files; each becomes one dataset row in the report.
    #[arg(required = true, value_name = "CSV")]
    pub ratings: Vec<PathBuf>,
    /// Directory for the JSON report; omit to print the table only.
    #[arg(long, value_name = "DIR")]
    pub out_dir: Option<PathBuf>,
    /// Agreement distance: nominal, ordinal, or interval.
    #[arg(long, value_name = "METRIC")]
    pub metric: Option<String>,
}

/// All keys accepted in the `--config` JSON file. Every knob reachable by
/// flag is reachable here under the same name.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub short_texts: Option<PathBuf>,
    pub short_format: Option<String>,
    pub topics: Option<PathBuf>,
    pub news: Option<PathBuf>,
    pub index_dir: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
    pub require_news: Option<bool>,
    pub llm_url: Option<String>,
    pub llm_model: Option<String>,
    pub embed_model: Option<String>,
    pub timeout_secs: Option<u64>,
    pub backend: Option<String>,
    pub script: Option<PathBuf>,
    pub embedder: Option<String>,
    pub mock_embed_dim: Option<usize>,
    pub k_short: Option<usize>,
    pub k_news: Option<usize>,
    pub max_refines: Option<usize>,
    pub parallelism: Option<usize>,
    pub max_retries: Option<u32>,
    pub bm25_k1: Option<f64>,
    pub bm25_b: Option<f64>,
    pub fail_policy: Option<String>,
    pub timings: Option<bool>,
    pub extract_prompt: Option<PathBuf>,
    pub validate_prompt: Option<PathBuf>,
    pub metric: Option<String>,
}

fn load_file_config(path: Option<&Path>) -> Result<FileConfig, CliError> {
    let Some(path) = path else { return Ok(FileConfig::default()) };
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::usage(format!("cannot read config {}: {e}", path.display())))?;
    serde_json::from_str(&text)
        .map_err(|e| CliError::usage(format!("invalid config {}: {e}", path.display())))
}

fn env_string(var: &str) -> Option<String> {
    std::env::var(var).ok().filter(|v| !v.trim().is_empty())
}

/// Connection and model-name settings after full precedence resolution.
#[derive(Debug, Clone)]
struct BackendSettings {
    llm_url: String,
    llm_model: String,
    embed_model: String,
    timeout: Duration,
}

fn resolve_backend_settings(
    conn: &ConnArgs,
    llm_model_flag: Option<&String>,
    embed_model_flag: Option<&String>,
    file: &FileConfig,
) -> Result<BackendSettings, CliError> {
    let timeout_secs = match conn.timeout_secs.or(file.timeout_secs) {
        Some(secs) => secs,
        None => match env_string(ENV_TIMEOUT_SECS) {
            Some(raw) => raw.parse::<u64>().map_err(|_| {
                CliError::usage(format!("{ENV_TIMEOUT_SECS}=`{raw}` is not a number of seconds"))
            })?,
            None => 120,
        },
    };
    Ok(BackendSettings {
        llm_url: conn
            .llm_url
            .clone()
            .or_else(|| file.llm_url.clone())
            .or_else(|| env_string(ENV_LLM_URL))
            .unwrap_or_else(|| DEFAULT_BASE_URL.to_string()),
        llm_model: llm_model_flag
            .cloned()
            .or_else(|| file.llm_model.clone())
            .or_else(|| env_string(ENV_LLM_MODEL))
            .unwrap_or_else(|| DEFAULT_CHAT_MODEL.to_string()),
        embed_model: embed_model_flag
            .cloned()
            .or_else(|| file.embed_model.clone())
            .or_else(|| env_string(ENV_EMBED_MODEL))
            .unwrap_or_else(|| DEFAULT_EMBED_MODEL.to_string()),
        timeout: Duration::from_secs(timeout_secs),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum BackendKind {
    Mock,
    Http,
}

fn parse_backend_kind(s: &str) -> Result<BackendKind, CliError> {
    match s {
        "mock" => Ok(BackendKind::Mock),
        "http" => Ok(BackendKind::Http),
        other => Err(CliError::usage(format!("unknown backend `{other}` (expected mock or http)"))),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum EmbedderKind {
    Mock,
    Http,
    None,
}

fn parse_embedder_kind(s: &str) -> Result<EmbedderKind, CliError> {
    match s {
        "mock" => Ok(EmbedderKind::Mock),
        "http" => Ok(EmbedderKind::Http),
        "none" => Ok(EmbedderKind::None),
        other => {
            Err(CliError::usage(format!("unknown embedder `{other}` (expected mock, http, or none)")))
        }
    }
}

const DEFAULT_MOCK_EMBED_DIM: usize = 32;

fn make_embedder(
    kind: EmbedderKind,
    dim: usize,
    settings: &BackendSettings,
) -> Option<Arc<dyn EmbeddingBackend>> {
    match kind {
        EmbedderKind::Mock => Some(Arc::new(HashEmbedder::new(dim, 0))),
        EmbedderKind::Http => Some(Arc::new(HttpEmbeddingBackend::new(
            &settings.llm_url,
            &settings.embed_model,
            settings.timeout,
        ))),
        EmbedderKind::None => None,
    }
}

#[derive(Debug, Serialize)]
struct ManifestEntry {
    kind: &'static str,
    path: String,
    loaded: usize,
    rejected: usize,
}

#[derive(Debug, Serialize)]
struct CorpusManifest {
    corpora: Vec<ManifestEntry>,
    short_texts: usize,
    news_docs: usize,
    topics: usize,
}

struct IngestOutcome {
    store: CorpusStore,
    entries: Vec<ManifestEntry>,
}

fn build_store(inputs: &InputArgs, file: &FileConfig) -> Result<IngestOutcome, CliError> {
    let short_path = inputs.short_texts.clone().or_else(|| file.short_texts.clone());
    let topics_path = inputs.topics.clone().or_else(|| file.topics.clone());
    let news_path = inputs.news.clone().or_else(|| file.news.clone());
    if short_path.is_none() && news_path.is_none() {
        return Err(CliError::usage(
            "no input corpus; pass --short-texts and/or --news (flags or config file)",
        ));
    }
    let format_name = inputs
        .short_format
        .clone()
        .or_else(|| file.short_format.clone())
        .unwrap_or_else(|| "jsonl".to_string());
    let format: ShortTextFormat =
        format_name.parse().map_err(|e: CorpusError| CliError::usage(e.to_string()))?;

    let mut store = CorpusStore::new();
    let mut entries = Vec::new();
    let mut push = |kind, path: &Path, report: IngestReport| {
        entries.push(ManifestEntry {
            kind,
            path: path.display().to_string(),
            loaded: report.loaded,
            rejected: report.rejected,
        });
    };
    if let Some(path) = &short_path {
        push("short_texts", path, store.ingest_short_texts(path, format)?);
    }
    if let Some(path) = &topics_path {
        push("topics", path, store.ingest_topics(path)?);
    }
    if let Some(path) = &news_path {
        push("news", path, store.ingest_news(path)?);
    }
    Ok(IngestOutcome { store, entries })
}

fn require_dir(name: &str, flag: Option<PathBuf>, file: Option<PathBuf>) -> Result<PathBuf, CliError> {
    flag.or(file).ok_or_else(|| CliError::usage(format!("{name} is required (flag or config file)")))
}

fn write_output(path: &Path, content: &str) -> Result<(), CliError> {
    std::fs::write(path, content)
        .map_err(|e| CliError::internal(format!("cannot write {}: {e}", path.display())))
}

pub fn cmd_ingest(args: &IngestArgs, file: &FileConfig) -> Result<(), CliError> {
    let out_dir = require_dir("--out-dir", args.out_dir.clone(), file.out_dir.clone())?;
    let require_news = args.require_news || file.require_news.unwrap_or(false);
    let news_given = args.inputs.news.is_some() || file.news.is_some();
    if require_news && !news_given {
        return Err(CliError::usage("--require-news is set but no news corpus was supplied"));
    }
    let outcome = build_store(&args.inputs, file)?;
    if require_news && outcome.store.news_count() == 0 {
        return Err(CliError::usage("--require-news is set but the news corpus is empty"));
    }
    std::fs::create_dir_all(&out_dir)
        .map_err(|e| CliError::internal(format!("cannot create {}: {e}", out_dir.display())))?;
    let snapshot = out_dir.join("corpus");
    outcome
        .store
        .save_jsonl_dir(&snapshot)
        .map_err(|e| CliError::internal(format!("cannot write corpus snapshot: {e}")))?;
    let manifest = CorpusManifest {
        corpora: outcome.entries,
        short_texts: outcome.store.short_text_count(),
        news_docs: outcome.store.news_count(),
        topics: outcome.store.topic_count(),
    };
    let json = serde_json::to_string_pretty(&manifest)
        .map_err(|e| CliError::internal(format!("manifest serialization: {e}")))?;
    write_output(&out_dir.join("corpus_manifest.json"), &(json + "\n"))?;
    log::info!(
        "ingested {} short texts, {} news docs, {} topics",
        manifest.short_texts,
        manifest.news_docs,
        manifest.topics
    );
    Ok(())
}

#[derive(Debug, Serialize)]
struct Bm25Summary {
    topics: usize,
    k1: f64,
    b: f64,
    docs_per_topic: std::collections::BTreeMap<String, usize>,
}

pub fn cmd_index(args: &IndexArgs, file: &FileConfig) -> Result<(), CliError> {
    let index_dir = require_dir("--index-dir", args.index_dir.clone(), file.index_dir.clone())?;
    let outcome = build_store(&args.inputs, file)?;
    let store = &outcome.store;
    std::fs::create_dir_all(&index_dir)
        .map_err(|e| CliError::internal(format!("cannot create {}: {e}", index_dir.display())))?;

    let k1 = file.bm25_k1.unwrap_or(1.2);
    let b = file.bm25_b.unwrap_or(0.75);
    let registry = Bm25Registry::build(store, k1, b);
    let summary = Bm25Summary {
        topics: registry.len(),
        k1,
        b,
        docs_per_topic: store
            .topics()
            .map(|t| (t.topic_id.clone(), store.topic_documents(&t.topic_id).len()))
            .collect(),
    };
    let json = serde_json::to_string_pretty(&summary)
        .map_err(|e| CliError::internal(format!("summary serialization: {e}")))?;
    write_output(&index_dir.join("bm25.json"), &(json + "\n"))?;

    let settings =
        resolve_backend_settings(&args.conn, None, args.embed.embed_model.as_ref(), file)?;
    let kind_name = args
        .embed
        .embedder
        .clone()
        .or_else(|| file.embedder.clone())
        .unwrap_or_else(|| "mock".to_string());
    let kind = parse_embedder_kind(&kind_name)?;
    let dim = args.embed.mock_embed_dim.or(file.mock_embed_dim).unwrap_or(DEFAULT_MOCK_EMBED_DIM);
    match (make_embedder(kind, dim, &settings), store.news_count()) {
        (None, _) => log::info!("embedder disabled; skipping the news vector index"),
        (_, 0) => log::info!("no news corpus; skipping the news vector index"),
        (Some(embedder), _) => {
            let news: Vec<_> = store.news().cloned().collect();
            let index = VectorIndex::build(&news, embedder.as_ref())?;
            let path = index_dir.join("news.vidx");
            index.save(&path)?;
            log::info!(
                "vector index: {} vectors, dimension {}, embedder {}",
                index.len(),
                index.dimension(),
                index.embedder_name()
            );
        }
    }
    log::info!("bm25 registry: {} topic indices", registry.len());
    Ok(())
}

pub fn cmd_run(args: &RunArgs, file: &FileConfig) -> Result<(), CliError> {
    let out_dir = require_dir("--out-dir", args.out_dir.clone(), file.out_dir.clone())?;
    let outcome = build_store(&args.inputs, file)?;
    let store = &outcome.store;
    if store.short_text_count() == 0 {
        return Err(CliError::usage("run needs a short-text corpus"));
    }
    if store.topic_count() == 0 {
        return Err(CliError::usage("run needs at least one topic"));
    }

    let backend_name = args
        .chat
        .backend
        .clone()
        .or_else(|| file.backend.clone())
        .unwrap_or_else(|| "http".to_string());
    let backend_kind = parse_backend_kind(&backend_name)?;
    let settings = resolve_backend_settings(
        &args.conn,
        args.chat.llm_model.as_ref(),
        args.embed.embed_model.as_ref(),
        file,
    )?;

    let embedder_name = args.embed.embedder.clone().or_else(|| file.embedder.clone());
    let embedder_kind = match embedder_name {
        Some(name) => parse_embedder_kind(&name)?,
        None => match backend_kind {
            BackendKind::Mock => EmbedderKind::Mock,
            BackendKind::Http => EmbedderKind::Http,
        },
    };
    let dim = args.embed.mock_embed_dim.or(file.mock_embed_dim).unwrap_or(DEFAULT_MOCK_EMBED_DIM);
    let embedder = make_embedder(embedder_kind, dim, &settings);

    let k1 = args.bm25_k1.or(file.bm25_k1).unwrap_or(1.2);
    let b = args.bm25_b.or(file.bm25_b).unwrap_or(0.75);
    let registry = Bm25Registry::build(store, k1, b);

    let vector_index = match (&embedder, store.news_count()) {
        (None, _) | (_, 0) => None,
        (Some(embedder), _) => {
            let prebuilt = args
                .index_dir
                .clone()
                .or_else(|| file.index_dir.clone())
                .map(|dir| dir.join("news.vidx"))
                .filter(|p| p.exists());
            let index = match prebuilt {
                Some(path) => {
                    let index = VectorIndex::load(&path, store)?;
                    if index.embedder_name() != embedder.model_name() {
                        return Err(CliError::usage(format!(
                            "index {} was embedded with `{}` but the run uses `{}`",
                            path.display(),
                            index.embedder_name(),
                            embedder.model_name()
                        )));
                    }
                    index
                }
                None => {
                    let news: Vec<_> = store.news().cloned().collect();
                    VectorIndex::build(&news, embedder.as_ref())?
                }
            };
            Some(index)
        }
    };

    let chat: Arc<dyn ChatProvider> = match backend_kind {
        BackendKind::Mock => {
            let script = args
                .chat
                .script
                .clone()
                .or_else(|| file.script.clone())
                .ok_or_else(|| CliError::usage("the mock backend needs --script"))?;
            Arc::new(ScriptedMock::from_file(&script)?)
        }
        BackendKind::Http => Arc::new(SharedChatProvider(Arc::new(HttpChatBackend::new(
            &settings.llm_url,
            &settings.llm_model,
        )))),
    };

    let max_refines = args.max_refines.or(file.max_refines).unwrap_or(100);
    if max_refines == 0 {
        return Err(CliError::usage("--max-refines must be at least 1"));
    }
    let mut config = PipelineConfig {
        k_short: args.k_short.or(file.k_short).unwrap_or(10),
        k_news: args.k_news.or(file.k_news).unwrap_or(5),
        max_refines,
        bm25_k1: k1,
        bm25_b: b,
        max_retries: args.max_retries.or(file.max_retries).unwrap_or(2),
        timeout: settings.timeout,
        parallelism: args.parallelism.or(file.parallelism).unwrap_or(1),
        include_timings: args.timings || file.timings.unwrap_or(false),
        ..PipelineConfig::default()
    };
    if let Some(policy) = args.fail_policy.clone().or_else(|| file.fail_policy.clone()) {
        config.fail_policy = match policy.as_str() {
            "emit_unvalidated" => FailPolicy::EmitUnvalidated,
            "drop" => FailPolicy::Drop,
            other => {
                return Err(CliError::usage(format!(
                    "unknown fail policy `{other}` (expected emit_unvalidated or drop)"
                )))
            }
        };
    }
    if let Some(path) = args.extract_prompt.clone().or_else(|| file.extract_prompt.clone()) {
        config.extract_template = PromptTemplate::from_file(TemplateName::Extract, &path)?;
    }
    if let Some(path) = args.validate_prompt.clone().or_else(|| file.validate_prompt.clone()) {
        config.validate_template = PromptTemplate::from_file(TemplateName::Validate, &path)?;
    }

    let pipeline =
        Pipeline::new(store, &registry, vector_index.as_ref(), chat, embedder, config);
    let report = pipeline.run_all();

    std::fs::create_dir_all(&out_dir)
        .map_err(|e| CliError::internal(format!("cannot create {}: {e}", out_dir.display())))?;
    write_output(&out_dir.join("run_report.jsonl"), &report.records_jsonl())?;
    write_output(&out_dir.join("narratives.jsonl"), &report.narratives_jsonl())?;
    let summary_json = serde_json::to_string_pretty(&report.summary)
        .map_err(|e| CliError::internal(format!("summary serialization: {e}")))?;
    write_output(&out_dir.join("run_summary.json"), &(summary_json + "\n"))?;
    log::info!(
        "run: {} topics, {} approved, {} exhausted, {} failed",
        report.summary.topics,
        report.summary.approved,
        report.summary.exhausted,
        report.summary.failed
    );
    if report.summary.failed > 0 {
        return Err(CliError::backend(format!(
            "{} topic(s) failed; see {}",
            report.summary.failed,
            out_dir.join("run_report.jsonl").display()
        )));
    }
    Ok(())
}

pub fn cmd_eval(args: &EvalArgs, file: &FileConfig) -> Result<(), CliError> {
    let metric_name = args
        .metric
        .clone()
        .or_else(|| file.metric.clone())
        .unwrap_or_else(|| "ordinal".to_string());
    let metric: AlphaMetric = metric_name.parse().map_err(CliError::usage)?;

    let mut datasets: Vec<DatasetEval> = Vec::new();
    let mut combined = Vec::new();
    for path in &args.ratings {
        let records = read_ratings_csv(path)?;
        let name = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| path.display().to_string());
        datasets.push(evaluate_dataset(&name, &records, metric));
        combined.extend(records);
    }
    if args.ratings.len() > 1 {
        datasets.push(evaluate_dataset("combined", &combined, metric));
    }

    print!("{}", render_eval_table(&datasets));
    if let Some(out_dir) = args.out_dir.clone().or_else(|| file.out_dir.clone()) {
        std::fs::create_dir_all(&out_dir)
            .map_err(|e| CliError::internal(format!("cannot create {}: {e}", out_dir.display())))?;
        let json = serde_json::to_string_pretty(&datasets)
            .map_err(|e| CliError::internal(format!("report serialization: {e}")))?;
        write_output(&out_dir.join("eval_report.json"), &(json + "\n"))?;
    }
    Ok(())
}

/// Parse argv, dispatch, and return the process exit code.
pub fn run_cli() -> i32 {
    run_cli_from(std::env::args_os())
}

/// Same as [`run_cli`] over explicit arguments.
pub fn run_cli_from<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .try_init();
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let file = match load_file_config(cli.config.as_deref()) {
        Ok(file) => file,
        Err(e) => {
            eprintln!("error: {e}");
            return e.exit_code;
        }
    };
    let result = match &cli.command {
        Command::Ingest(args) => cmd_ingest(args, &file),
        Command::Index(args) => cmd_index(args, &file),
        Command::Run(args) => cmd_run(args, &file),
        Command::Eval(args) => cmd_eval(args, &file),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code
        }
    }
}
