//! Embed a news corpus, persist the vector index, reload it, and run a
//! cosine top-k query. The deterministic hash embedder stands in for a real
//! embedding model, so the output is stable across machines.
//!
//! ```bash
//! cargo run -p ntlrag --example news_vector_search
//! ```

use std::path::Path;

use ntlrag::backend::mock::HashEmbedder;
use ntlrag::corpus::CorpusStore;
use ntlrag::retrieval::{QueryString, VectorIndex};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let fixtures = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/multi");
    let mut store = CorpusStore::new();
    store.ingest_news(&fixtures.join("news.jsonl"))?;

    let embedder = HashEmbedder::new(32, 0);
    let news: Vec<_> = store.news().cloned().collect();
    let index = VectorIndex::build(&news, &embedder)?;
    println!(
        "built index: {} vectors, dimension {}, embedder {}",
        index.len(),
        index.dimension(),
        index.embedder_name()
    );

    let dir = tempfile::tempdir()?;
    let path = dir.path().join("news.vidx");
    index.save(&path)?;
    let reloaded = VectorIndex::load(&path, &store)?;
    println!("reloaded from {} ({} bytes)\n", path.display(), std::fs::metadata(&path)?.len());

    let query = QueryString {
        topic_id: "demo".into(),
        text: "bridge closed for inspection".into(),
    };
    println!("query: {}", query.text);
    for hit in reloaded.retrieve(&query, &embedder, 3)? {
        println!("  {:>8.4}  [{}] {}", hit.score, hit.doc.id, hit.doc.text);
    }
    Ok(())
}
