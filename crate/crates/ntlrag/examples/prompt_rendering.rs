//! Render the two shipped prompt templates: extraction over retrieved short
//! texts, and validation over a candidate narrative plus the combined
//! context.
//!
//! ```bash
//! cargo run -p ntlrag --example prompt_rendering
//! ```

use ntlrag::corpus::{Document, SourceKind};
use ntlrag::narrative::{
    render_extract_prompt, render_validate_prompt, NarrativeSchema, PromptTemplate,
};

fn doc(id: &str, text: &str) -> Document {
    Document {
        id: id.into(),
        text: text.into(),
        source_kind: SourceKind::ShortText,
        metadata: None,
    }
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let docs = [
        doc("s1", "the bridge is closed again this morning"),
        doc("s2", "third bridge closure this month commuters furious"),
    ];
    let doc_refs: Vec<&Document> = docs.iter().collect();

    let extract = PromptTemplate::extract_default();
    let (system, user) = render_extract_prompt(&extract, &doc_refs)?;
    println!("=== extraction system message ===\n{system}\n");
    println!("=== extraction user message ===\n{user}\n");

    let narrative = NarrativeSchema {
        topic_id: "t-bridge".into(),
        actor: "commuters".into(),
        action: "complain about".into(),
        event: "repeated bridge closures".into(),
        description: "Commuters complain about the bridge being closed repeatedly this month.".into(),
    };
    let validate = PromptTemplate::validate_default();
    let (system, user) = render_validate_prompt(&validate, &narrative, &doc_refs)?;
    println!("=== validation system message ===\n{system}\n");
    println!("=== validation user message ===\n{user}");
    Ok(())
}
