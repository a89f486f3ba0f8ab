//! Run the pipeline against a live local model server.
//!
//! Point it at a server that speaks the `/api/chat` + `/api/embeddings`
//! protocol (a stock local LLM runner does) and make sure the chat and
//! embedding models are pulled:
//!
//! ```bash
//! NTLRAG_LLM_URL=http://localhost:11434 \
//! NTLRAG_LLM_MODEL=llama3.2 \
//! NTLRAG_EMBED_MODEL=nomic-embed-text \
//! cargo run -p ntlrag --example live_server
//! ```
//!
//! Unset variables fall back to the defaults above. Model output varies
//! between runs and models; the structure of the report does not.

use std::path::Path;
use std::sync::Arc;
use std::time::Duration;

use ntlrag::backend::http::{
    HttpChatBackend, HttpEmbeddingBackend, DEFAULT_BASE_URL, DEFAULT_CHAT_MODEL,
    DEFAULT_EMBED_MODEL,
};
use ntlrag::backend::{SharedChatProvider, ENV_EMBED_MODEL, ENV_LLM_MODEL, ENV_LLM_URL};
use ntlrag::corpus::{CorpusStore, ShortTextFormat};
use ntlrag::pipeline::{Pipeline, PipelineConfig};
use ntlrag::retrieval::{Bm25Registry, VectorIndex};

fn env_or(var: &str, default: &str) -> String {
    std::env::var(var).ok().filter(|v| !v.is_empty()).unwrap_or_else(|| default.to_string())
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let url = env_or(ENV_LLM_URL, DEFAULT_BASE_URL);
    let chat_model = env_or(ENV_LLM_MODEL, DEFAULT_CHAT_MODEL);
    let embed_model = env_or(ENV_EMBED_MODEL, DEFAULT_EMBED_MODEL);
    println!("server {url}, chat model {chat_model}, embedding model {embed_model}\n");

    let fixtures = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/multi");
    let mut store = CorpusStore::new();
    store.ingest_short_texts(&fixtures.join("short_texts.jsonl"), ShortTextFormat::Jsonl)?;
    store.ingest_topics(&fixtures.join("topics.jsonl"))?;
    store.ingest_news(&fixtures.join("news.jsonl"))?;
    let registry = Bm25Registry::build(&store, 1.2, 0.75);

    let embedder = Arc::new(HttpEmbeddingBackend::new(&url, &embed_model, Duration::from_secs(60)));
    let news: Vec<_> = store.news().cloned().collect();
    let index = match VectorIndex::build(&news, embedder.as_ref()) {
        Ok(index) => index,
        Err(e) => {
            eprintln!("cannot embed the news corpus ({e}); is the server up and the model pulled?");
            return Ok(());
        }
    };

    let chat = Arc::new(SharedChatProvider(Arc::new(HttpChatBackend::new(&url, &chat_model))));
    let config = PipelineConfig { max_refines: 5, ..PipelineConfig::default() };
    let pipeline = Pipeline::new(&store, &registry, Some(&index), chat, Some(embedder), config);
    let report = pipeline.run_all();

    for record in &report.records {
        println!("topic {} — {:?} after {} attempt(s)", record.topic_id, record.final_status, record.attempts.len());
        if let Some(narrative) = &record.final_narrative {
            println!("  {} | {} | {}", narrative.actor, narrative.action, narrative.event);
            println!("  {}", narrative.description);
        }
        if let Some(reason) = &record.failure_reason {
            println!("  failure: {reason}");
        }
    }
    println!(
        "\nsummary: {} approved, {} exhausted, {} failed",
        report.summary.approved, report.summary.exhausted, report.summary.failed
    );
    Ok(())
}
