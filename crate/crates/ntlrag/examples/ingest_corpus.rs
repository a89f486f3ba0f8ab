//! Load the bundled demo corpora and show what normalization does to raw
//! short texts along the way.
//!
//! ```bash
//! cargo run -p ntlrag --example ingest_corpus
//! ```

use std::path::Path;

use ntlrag::corpus::{normalize_text, CorpusStore, ShortTextFormat};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let raw = "RT @mayor: We've CLOSED the #bridge — see https://city.example/closures!!";
    println!("raw:        {raw}");
    println!("normalized: {}\n", normalize_text(raw));

    let fixtures = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/multi");
    let mut store = CorpusStore::new();
    let shorts = store.ingest_short_texts(&fixtures.join("short_texts.jsonl"), ShortTextFormat::Jsonl)?;
    let topics = store.ingest_topics(&fixtures.join("topics.jsonl"))?;
    let news = store.ingest_news(&fixtures.join("news.jsonl"))?;

    println!(
        "loaded {} short texts ({} rejected), {} topics, {} news articles",
        shorts.loaded, shorts.rejected, topics.loaded, news.loaded
    );
    for topic in store.topics() {
        let docs = store.topic_documents(&topic.topic_id);
        println!("\ntopic {} — keywords: {}", topic.topic_id, topic.keywords.join(", "));
        for doc in docs {
            println!("  [{}] {}", doc.id, doc.text);
        }
    }
    Ok(())
}
