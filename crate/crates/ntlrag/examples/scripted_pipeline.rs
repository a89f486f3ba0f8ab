//! The full loop offline: retrieval from both corpora, extraction,
//! validation, one refinement, and approval, all driven by a scripted
//! backend. The script replays a hallucinated first draft that the validator
//! rejects; the second draft sticks to the context and is approved.
//!
//! ```bash
//! cargo run -p ntlrag --example scripted_pipeline
//! ```

use std::path::Path;
use std::sync::Arc;

use ntlrag::backend::mock::{HashEmbedder, ScriptedMock};
use ntlrag::corpus::{CorpusStore, ShortTextFormat};
use ntlrag::pipeline::{Pipeline, PipelineConfig};
use ntlrag::retrieval::{Bm25Registry, VectorIndex};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let fixtures = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/table3");
    let mut store = CorpusStore::new();
    store.ingest_short_texts(&fixtures.join("short_texts.jsonl"), ShortTextFormat::Jsonl)?;
    store.ingest_topics(&fixtures.join("topics.jsonl"))?;
    store.ingest_news(&fixtures.join("news.jsonl"))?;

    let registry = Bm25Registry::build(&store, 1.2, 0.75);
    let embedder = Arc::new(HashEmbedder::new(32, 0));
    let news: Vec<_> = store.news().cloned().collect();
    let index = VectorIndex::build(&news, embedder.as_ref())?;
    let chat = Arc::new(ScriptedMock::from_file(&fixtures.join("script.json"))?);

    let pipeline = Pipeline::new(
        &store,
        &registry,
        Some(&index),
        chat,
        Some(embedder),
        PipelineConfig::default(),
    );
    let report = pipeline.run_all();

    for record in &report.records {
        println!("topic {} — {:?}", record.topic_id, record.final_status);
        println!(
            "  context: {} short texts, {} news articles",
            record.context.short_text.len(),
            record.context.news.len()
        );
        for attempt in &record.attempts {
            let event = attempt
                .narrative
                .as_ref()
                .map_or("<schema failure>", |n| n.event.as_str());
            println!(
                "  attempt {}: event `{}` -> {:?}: {}",
                attempt.attempt, event, attempt.verdict.label, attempt.verdict.explanation
            );
        }
        if let Some(narrative) = &record.final_narrative {
            println!("  final: {}", serde_json::to_string_pretty(narrative)?);
        }
    }
    println!(
        "\nsummary: {} approved, {} exhausted, {} failed",
        report.summary.approved, report.summary.exhausted, report.summary.failed
    );
    Ok(())
}
