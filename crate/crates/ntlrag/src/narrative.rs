//! The narrative label schema, verdict parsing, and prompt templates.
//!
//! A narrative label has five fields: topic id, actor, action, event, and a
//! one-sentence description. Model output is parsed leniently (extra keys
//! ignored, the pipeline's topic id always wins) but validated strictly:
//! every field must be a non-empty string. Parse failures are data, not
//! errors; the pipeline turns them into refine verdicts.
//!
//! Prompt templates are plain text assets with `{{slot}}` placeholders,
//! shipped with the crate and overridable from a file at run time.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::corpus::Document;

/// A structured topic label: who does what in which event, plus a
/// one-sentence summary.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NarrativeSchema {
    pub topic_id: String,
    pub actor: String,
    pub action: String,
    pub event: String,
    pub description: String,
}

/// Validation outcome for one narrative.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationVerdict {
    pub label: VerdictLabel,
    /// Mandatory chain-of-thought justification.
    pub explanation: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VerdictLabel {
    Approve,
    Refine,
}

/// One field-level problem found while parsing a narrative.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FieldViolation {
    pub field: String,
    pub problem: FieldProblem,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FieldProblem {
    Missing,
    Empty,
    WrongType,
    NotAnObject,
}

impl std::fmt::Display for FieldViolation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let problem = match self.problem {
            FieldProblem::Missing => "is missing",
            FieldProblem::Empty => "is empty",
            FieldProblem::WrongType => "is not a string",
            FieldProblem::NotAnObject => "is not a JSON object",
        };
        write!(f, "'{}' {problem}", self.field)
    }
}

/// Human-readable summary of a violation list, used as the explanation of
/// locally generated refine verdicts.
pub fn violations_summary(violations: &[FieldViolation]) -> String {
    let parts: Vec<String> = violations.iter().map(FieldViolation::to_string).collect();
    format!("validity check failed: {}", parts.join(", "))
}

/// The four model-filled fields, in schema order.
pub const EXTRACTED_FIELDS: [&str; 4] = ["actor", "action", "event", "description"];

/// Interpret raw model output as a narrative for `topic_id`.
///
/// Accepts any JSON object carrying the four extracted fields as non-empty
/// strings; extra keys (including a model-supplied topic id) are ignored.
/// Returns every field-level violation otherwise.
pub fn parse_narrative(raw: &Value, topic_id: &str) -> Result<NarrativeSchema, Vec<FieldViolation>> {
    let Some(obj) = raw.as_object() else {
        return Err(vec![FieldViolation {
            field: "$".into(),
            problem: FieldProblem::NotAnObject,
        }]);
    };
    let mut violations = Vec::new();
    let mut fields = BTreeMap::new();
    for name in EXTRACTED_FIELDS {
        match obj.get(name) {
            None => violations.push(FieldViolation { field: name.into(), problem: FieldProblem::Missing }),
            Some(Value::String(s)) if s.trim().is_empty() => {
                violations.push(FieldViolation { field: name.into(), problem: FieldProblem::Empty })
            }
            Some(Value::String(s)) => {
                fields.insert(name, s.clone());
            }
            Some(_) => violations.push(FieldViolation { field: name.into(), problem: FieldProblem::WrongType }),
        }
    }
    if !violations.is_empty() {
        return Err(violations);
    }
    let narrative = NarrativeSchema {
        topic_id: topic_id.to_string(),
        actor: fields.remove("actor").unwrap(),
        action: fields.remove("action").unwrap(),
        event: fields.remove("event").unwrap(),
        description: fields.remove("description").unwrap(),
    };
    if !is_single_sentence(&narrative.description) {
        log::warn!(
            "topic {topic_id}: description has multiple sentences: {:?}",
            narrative.description
        );
    }
    Ok(narrative)
}

/// Loose single-sentence check: at most one terminal punctuation mark.
fn is_single_sentence(description: &str) -> bool {
    description.chars().filter(|c| matches!(c, '.' | '!' | '?')).count() <= 1
}

/// Why raw model output could not be read as a verdict.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerdictFailure {
    pub reason: String,
}

/// Interpret raw model output as a validation verdict.
///
/// `approved` and `approve` both mean approval (both spellings appear in the
/// prompt contract); `refine` means refine; anything else fails. The
/// explanation must be a non-empty string. Failures are data; the pipeline
/// retries them as it would a transport hiccup.
pub fn parse_verdict(raw: &Value) -> Result<ValidationVerdict, VerdictFailure> {
    let fail = |reason: &str| VerdictFailure { reason: reason.to_string() };
    let obj = raw.as_object().ok_or_else(|| fail("verdict is not a JSON object"))?;
    let label_raw = obj
        .get("label")
        .ok_or_else(|| fail("verdict has no 'label'"))?
        .as_str()
        .ok_or_else(|| fail("'label' is not a string"))?;
    let label = match label_raw.trim().to_lowercase().as_str() {
        "approve" | "approved" => VerdictLabel::Approve,
        "refine" => VerdictLabel::Refine,
        other => return Err(fail(&format!("unrecognized label {other:?}"))),
    };
    let explanation = obj
        .get("explanation")
        .ok_or_else(|| fail("verdict has no 'explanation'"))?
        .as_str()
        .ok_or_else(|| fail("'explanation' is not a string"))?
        .to_string();
    if explanation.trim().is_empty() {
        return Err(fail("'explanation' is empty"));
    }
    Ok(ValidationVerdict { label, explanation })
}

/// JSON schema for extraction output: the four extracted fields, all
/// required strings.
pub fn narrative_output_schema() -> Value {
    serde_json::json!({
        "type": "object",
        "properties": {
            "actor": {"type": "string"},
            "action": {"type": "string"},
            "event": {"type": "string"},
            "description": {"type": "string"}
        },
        "required": EXTRACTED_FIELDS
    })
}

/// JSON schema for validation output: a label plus an explanation.
pub fn verdict_output_schema() -> Value {
    serde_json::json!({
        "type": "object",
        "properties": {
            "label": {"type": "string", "enum": ["approved", "refine"]},
            "explanation": {"type": "string"}
        },
        "required": ["label", "explanation"]
    })
}

#[derive(Debug, Error)]
pub enum PromptError {
    #[error("cannot read template {path}: {source}")]
    Io {
        path: std::path::PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("template {0} is missing its [system] or [user] section")]
    MissingSection(String),
    #[error("template slot {{{{{0}}}}} was not filled")]
    UnfilledSlot(String),
    #[error("cannot render a prompt over zero documents")]
    EmptyDocs,
}

/// Which of the two shipped prompts a template stands for.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TemplateName {
    Extract,
    Validate,
}

/// A prompt template: a fixed system message and a user-message body with
/// `{{slot}}` placeholders.
#[derive(Debug, Clone)]
pub struct PromptTemplate {
    name: TemplateName,
    system_message: String,
    user_template: String,
}

fn slot_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\{\{(\w+)\}\}").unwrap())
}

impl PromptTemplate {
    /// The extraction prompt shipped with the crate.
    pub fn extract_default() -> Self {
        Self::parse(TemplateName::Extract, include_str!("../prompts/extract.txt"))
            .expect("shipped extract template is well-formed")
    }

    /// The validation prompt shipped with the crate.
    pub fn validate_default() -> Self {
        Self::parse(TemplateName::Validate, include_str!("../prompts/validate.txt"))
            .expect("shipped validate template is well-formed")
    }

    /// Load an override template from a file in the same `[system]` /
    /// `[user]` sectioned format as the shipped assets.
    pub fn from_file(name: TemplateName, path: &Path) -> Result<Self, PromptError> {
        let text = std::fs::read_to_string(path).map_err(|source| PromptError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(name, &text)
    }

    fn parse(name: TemplateName, text: &str) -> Result<Self, PromptError> {
        let label = match name {
            TemplateName::Extract => "extract",
            TemplateName::Validate => "validate",
        };
        let mut system = None;
        let mut user = None;
        let mut current: Option<&mut String> = None;
        for line in text.lines() {
            match line.trim_end() {
                "[system]" => current = Some(system.get_or_insert_with(String::new)),
                "[user]" => current = Some(user.get_or_insert_with(String::new)),
                _ => {
                    if let Some(buf) = current.as_deref_mut() {
                        buf.push_str(line);
                        buf.push('\n');
                    }
                }
            }
        }
        match (system, user) {
            (Some(system_message), Some(user_template)) => Ok(Self {
                name,
                system_message: system_message.trim().to_string(),
                user_template: user_template.trim_end().to_string(),
            }),
            _ => Err(PromptError::MissingSection(label.to_string())),
        }
    }

    pub fn name(&self) -> TemplateName {
        self.name
    }

    pub fn system_message(&self) -> &str {
        &self.system_message
    }

    /// Fill every `{{slot}}` in the user template; a placeholder without a
    /// value fails.
    pub fn render(&self, slots: &BTreeMap<&str, String>) -> Result<(String, String), PromptError> {
        let mut unfilled = None;
        let user = slot_re()
            .replace_all(&self.user_template, |caps: &regex::Captures<'_>| {
                let key = caps.get(1).unwrap().as_str();
                match slots.get(key) {
                    Some(value) => value.clone(),
                    None => {
                        unfilled.get_or_insert_with(|| key.to_string());
                        String::new()
                    }
                }
            })
            .into_owned();
        if let Some(slot) = unfilled {
            return Err(PromptError::UnfilledSlot(slot));
        }
        Ok((self.system_message.clone(), user))
    }
}

/// Join document texts for a prompt: one document per line, retrieval order.
fn join_docs(docs: &[&Document]) -> String {
    docs.iter().map(|d| d.text.as_str()).collect::<Vec<_>>().join("\n")
}

/// Render the extraction prompt over the retrieved short texts (D_S).
pub fn render_extract_prompt(
    template: &PromptTemplate,
    docs: &[&Document],
) -> Result<(String, String), PromptError> {
    if docs.is_empty() {
        return Err(PromptError::EmptyDocs);
    }
    let mut slots = BTreeMap::new();
    slots.insert("documents", join_docs(docs));
    template.render(&slots)
}

/// Render the validation prompt over a narrative and the combined context D.
pub fn render_validate_prompt(
    template: &PromptTemplate,
    narrative: &NarrativeSchema,
    context: &[&Document],
) -> Result<(String, String), PromptError> {
    if context.is_empty() {
        return Err(PromptError::EmptyDocs);
    }
    let mut slots = BTreeMap::new();
    slots.insert("context", join_docs(context));
    slots.insert(
        "narrative",
        serde_json::to_string_pretty(narrative).expect("narrative serializes"),
    );
    template.render(&slots)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::SourceKind;
    use proptest::prelude::*;

    fn doc(id: &str, text: &str) -> Document {
        Document {
            id: id.into(),
            text: text.into(),
            source_kind: SourceKind::ShortText,
            metadata: None,
        }
    }

    fn valid_raw() -> Value {
        serde_json::json!({
            "actor": "user",
            "action": "expresses frustration with gun violence",
            "event": "mass shootings",
            "description": "The user expresses frustration with mass shootings in the US, highlighting their increasing frequency and casualty count."
        })
    }

    #[test]
    fn parses_a_valid_narrative_and_supplies_the_topic_id() {
        let narrative = parse_narrative(&valid_raw(), "t42").unwrap();
        assert_eq!(narrative.topic_id, "t42");
        assert_eq!(narrative.actor, "user");
        assert_eq!(narrative.event, "mass shootings");
    }

    #[test]
    fn model_supplied_topic_id_is_overridden() {
        let mut raw = valid_raw();
        raw["topic_id"] = serde_json::json!("model-made-this-up");
        let narrative = parse_narrative(&raw, "t1").unwrap();
        assert_eq!(narrative.topic_id, "t1");
    }

    #[test]
    fn empty_actor_is_a_violation() {
        let raw = serde_json::json!({"actor": "", "action": "x", "event": "y", "description": "z."});
        let violations = parse_narrative(&raw, "t").unwrap_err();
        assert_eq!(violations, vec![FieldViolation { field: "actor".into(), problem: FieldProblem::Empty }]);
    }

    #[test]
    fn missing_fields_are_all_reported() {
        let raw = serde_json::json!({"actor": "user"});
        let violations = parse_narrative(&raw, "t").unwrap_err();
        let fields: Vec<&str> = violations.iter().map(|v| v.field.as_str()).collect();
        assert_eq!(fields, vec!["action", "event", "description"]);
        assert!(violations.iter().all(|v| v.problem == FieldProblem::Missing));
    }

    #[test]
    fn non_string_field_is_wrong_type() {
        let raw = serde_json::json!({"actor": 7, "action": "x", "event": "y", "description": "z."});
        let violations = parse_narrative(&raw, "t").unwrap_err();
        assert_eq!(violations[0].problem, FieldProblem::WrongType);
    }

    #[test]
    fn non_object_input_is_rejected() {
        let violations = parse_narrative(&serde_json::json!(["a", "b"]), "t").unwrap_err();
        assert_eq!(violations[0].problem, FieldProblem::NotAnObject);
    }

    #[test]
    fn whitespace_only_field_counts_as_empty() {
        let raw = serde_json::json!({"actor": "  ", "action": "x", "event": "y", "description": "z."});
        let violations = parse_narrative(&raw, "t").unwrap_err();
        assert_eq!(violations[0].problem, FieldProblem::Empty);
    }

    #[test]
    fn serialization_round_trips_the_five_fields() {
        let narrative = parse_narrative(&valid_raw(), "t42").unwrap();
        let serialized = serde_json::to_value(&narrative).unwrap();
        let obj = serialized.as_object().unwrap();
        assert_eq!(obj.len(), 5);
        for field in EXTRACTED_FIELDS {
            assert_eq!(obj[field], valid_raw()[field]);
        }
        assert_eq!(obj["topic_id"], "t42");
        let back: NarrativeSchema = serde_json::from_value(serialized).unwrap();
        assert_eq!(back, narrative);
    }

    #[test]
    fn multi_sentence_description_is_tolerated() {
        let raw = serde_json::json!({
            "actor": "a", "action": "b", "event": "c",
            "description": "First sentence. Second sentence!"
        });
        assert!(parse_narrative(&raw, "t").is_ok());
    }

    #[test]
    fn violations_summary_reads_naturally() {
        let violations = vec![
            FieldViolation { field: "action".into(), problem: FieldProblem::Missing },
            FieldViolation { field: "event".into(), problem: FieldProblem::Empty },
        ];
        assert_eq!(
            violations_summary(&violations),
            "validity check failed: 'action' is missing, 'event' is empty"
        );
    }

    #[test]
    fn verdict_accepts_both_approve_spellings() {
        for label in ["approved", "approve", "Approved", " APPROVE "] {
            let raw = serde_json::json!({"label": label, "explanation": "consistent with context"});
            assert_eq!(parse_verdict(&raw).unwrap().label, VerdictLabel::Approve, "{label}");
        }
    }

    #[test]
    fn verdict_parses_refine_with_explanation() {
        let raw = serde_json::json!({"label": "refine", "explanation": "The narrative includes hallucinations"});
        let verdict = parse_verdict(&raw).unwrap();
        assert_eq!(verdict.label, VerdictLabel::Refine);
        assert!(verdict.explanation.contains("hallucinations"));
    }

    #[test]
    fn verdict_rejects_unknown_labels_and_missing_explanations() {
        let raw = serde_json::json!({"label": "maybe", "explanation": "x"});
        assert!(parse_verdict(&raw).unwrap_err().reason.contains("maybe"));
        let raw = serde_json::json!({"label": "refine"});
        assert!(parse_verdict(&raw).is_err());
        let raw = serde_json::json!({"label": "refine", "explanation": "  "});
        assert!(parse_verdict(&raw).is_err());
        assert!(parse_verdict(&serde_json::json!("approved")).is_err());
    }

    #[test]
    fn extract_prompt_embeds_documents_in_order_after_the_separator() {
        let template = PromptTemplate::extract_default();
        let d1 = doc("a", "first tweet text");
        let d2 = doc("b", "second tweet text");
        let (system, user) = render_extract_prompt(&template, &[&d1, &d2]).unwrap();
        assert_eq!(system, "You are an information extraction system.");
        assert!(user.contains("STRICTLY use only the information found in the provided documents."));
        assert!(user.contains("ONLY if you cannot determine an 'actor', use 'user'."));
        let separator = user.find("DOCUMENTS:").unwrap();
        let first = user.find("first tweet text").unwrap();
        let second = user.find("second tweet text").unwrap();
        assert!(separator < first && first < second);
        assert!(user.contains("first tweet text\nsecond tweet text"));
    }

    #[test]
    fn extract_prompt_rejects_zero_documents() {
        let template = PromptTemplate::extract_default();
        assert!(matches!(render_extract_prompt(&template, &[]), Err(PromptError::EmptyDocs)));
    }

    #[test]
    fn renders_are_deterministic() {
        let template = PromptTemplate::extract_default();
        let d = doc("a", "same text");
        assert_eq!(
            render_extract_prompt(&template, &[&d]).unwrap(),
            render_extract_prompt(&template, &[&d]).unwrap()
        );
    }

    #[test]
    fn validate_prompt_embeds_narrative_and_context() {
        let template = PromptTemplate::validate_default();
        let narrative = NarrativeSchema {
            topic_id: "t".into(),
            actor: "shooter".into(),
            action: "opened fire".into(),
            event: "office building".into(),
            description: "A shooter opened fire in an office building.".into(),
        };
        let ctx = [doc("s1", "reports of gunfire downtown"), doc("n1", "no ar15 found at the scene")];
        let refs: Vec<&Document> = ctx.iter().collect();
        let (system, user) = render_validate_prompt(&template, &narrative, &refs).unwrap();
        assert!(system.starts_with("You are a narrative fact-checker."));
        assert!(user.contains("Start by assuming the narrative is **approved**"));
        assert!(user.contains("Approximate matches exist (e.g. 'America' and 'US')."));
        assert!(user.contains("Consider grammar, tone, or style."));
        assert!(user.contains("office building"));
        assert!(user.contains("no ar15 found at the scene"));
        assert!(user.contains("reports of gunfire downtown\nno ar15 found at the scene"));
    }

    #[test]
    fn validate_prompt_rejects_empty_context() {
        let template = PromptTemplate::validate_default();
        let narrative = parse_narrative(&valid_raw(), "t").unwrap();
        assert!(matches!(
            render_validate_prompt(&template, &narrative, &[]),
            Err(PromptError::EmptyDocs)
        ));
    }

    #[test]
    fn template_files_can_override_the_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("custom.txt");
        std::fs::write(&path, "[system]\ncustom system\n[user]\nDocs: {{documents}}\n").unwrap();
        let template = PromptTemplate::from_file(TemplateName::Extract, &path).unwrap();
        let d = doc("a", "body");
        let (system, user) = render_extract_prompt(&template, &[&d]).unwrap();
        assert_eq!(system, "custom system");
        assert_eq!(user, "Docs: body");
    }

    #[test]
    fn unfilled_slots_fail_the_render() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("custom.txt");
        std::fs::write(&path, "[system]\ns\n[user]\nneeds {{missing_slot}}\n").unwrap();
        let template = PromptTemplate::from_file(TemplateName::Extract, &path).unwrap();
        let err = template.render(&BTreeMap::new()).unwrap_err();
        assert!(matches!(err, PromptError::UnfilledSlot(s) if s == "missing_slot"));
    }

    #[test]
    fn sectionless_template_files_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.txt");
        std::fs::write(&path, "no sections here").unwrap();
        assert!(matches!(
            PromptTemplate::from_file(TemplateName::Validate, &path),
            Err(PromptError::MissingSection(_))
        ));
    }

    #[test]
    fn output_schemas_list_required_fields() {
        let schema = narrative_output_schema();
        assert_eq!(schema["required"], serde_json::json!(EXTRACTED_FIELDS));
        let schema = verdict_output_schema();
        assert_eq!(schema["required"], serde_json::json!(["label", "explanation"]));
    }

    proptest! {
        #[test]
        fn deleting_any_field_always_fails_parse(idx in 0usize..4) {
            let mut raw = valid_raw();
            raw.as_object_mut().unwrap().remove(EXTRACTED_FIELDS[idx]);
            let violations = parse_narrative(&raw, "t").unwrap_err();
            prop_assert!(violations.iter().any(|v| v.field == EXTRACTED_FIELDS[idx] && v.problem == FieldProblem::Missing));
        }

        #[test]
        fn blanking_any_field_always_fails_parse(idx in 0usize..4, blank in "[ \t]{0,6}") {
            let mut raw = valid_raw();
            raw[EXTRACTED_FIELDS[idx]] = Value::String(blank);
            let violations = parse_narrative(&raw, "t").unwrap_err();
            prop_assert!(violations.iter().any(|v| v.field == EXTRACTED_FIELDS[idx] && v.problem == FieldProblem::Empty));
        }

        #[test]
        fn user_actor_with_valid_fields_always_parses(
            action in "[a-z]{1,12}( [a-z]{1,12}){0,3}",
            event in "[a-z]{1,12}( [a-z]{1,12}){0,2}",
        ) {
            let raw = serde_json::json!({
                "actor": "user",
                "action": action,
                "event": event,
                "description": format!("The user {action} during {event}.")
            });
            let narrative = parse_narrative(&raw, "t").unwrap();
            prop_assert_eq!(narrative.actor, "user");
        }
    }
}
