//! What happens when the validator never approves: the loop stops after the
//! configured number of refinements, and the fail policy decides whether the
//! last unapproved narrative is still emitted.
//!
//! ```bash
//! cargo run -p ntlrag --example refine_cap
//! ```

use std::path::Path;
use std::sync::Arc;

use ntlrag::backend::mock::ScriptedMock;
use ntlrag::corpus::{CorpusStore, ShortTextFormat};
use ntlrag::pipeline::{FailPolicy, Pipeline, PipelineConfig};
use ntlrag::retrieval::Bm25Registry;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let fixtures = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures");
    let mut store = CorpusStore::new();
    store.ingest_short_texts(&fixtures.join("multi/short_texts.jsonl"), ShortTextFormat::Jsonl)?;
    store.ingest_topics(&fixtures.join("multi/topics.jsonl"))?;
    let registry = Bm25Registry::build(&store, 1.2, 0.75);

    for policy in [FailPolicy::EmitUnvalidated, FailPolicy::Drop] {
        let chat = Arc::new(ScriptedMock::from_file(&fixtures.join("always_refine.json"))?);
        let config = PipelineConfig {
            max_refines: 3,
            fail_policy: policy,
            ..PipelineConfig::default()
        };
        let pipeline = Pipeline::new(&store, &registry, None, chat, None, config);
        let report = pipeline.run_all();

        println!("fail policy {policy:?}:");
        for record in &report.records {
            println!(
                "  topic {}: {} attempts, status {:?}, narrative emitted: {}",
                record.topic_id,
                record.attempts.len(),
                record.final_status,
                record.final_narrative.is_some()
            );
        }
        let narratives = report.narratives_jsonl();
        println!("  narratives.jsonl carries {} line(s)\n", narratives.lines().count());
    }
    println!("max_refines bounds the loop: 1 initial extraction + at most N refinements.");
    Ok(())
}
