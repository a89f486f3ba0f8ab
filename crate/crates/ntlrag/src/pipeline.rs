//! The retrieve, extract, validate, refine loop and its run records.
//!
//! For each topic: build the keyword query, retrieve D_S (topic BM25) and
//! D_N (news cosine), concatenate into D, extract a narrative from D_S, then
//! validate against D. A refine verdict re-runs extraction with the
//! unchanged prompt; the loop stops at approval or after `max_refines`
//! refinements. Every attempt lands in an auditable per-topic record, and
//! one topic's failure never touches another's.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::mpsc;
use std::sync::Arc;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::backend::{
    complete_structured, BackendError, BackendRequest, ChatBackend, ChatProvider, EmbeddingBackend,
};
use crate::corpus::{CorpusStore, Document, TopicCluster};
use crate::narrative::{
    narrative_output_schema, parse_narrative, parse_verdict, render_extract_prompt,
    render_validate_prompt, verdict_output_schema, violations_summary, FieldViolation,
    NarrativeSchema, PromptError, PromptTemplate, ValidationVerdict, VerdictLabel,
};
use crate::retrieval::{
    assemble_context, build_query, Bm25Registry, ContextBundle, QueryString, RetrievalError,
    VectorIndex,
};

/// What to do with the last narrative when the refine cap is hit.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailPolicy {
    /// Keep the unapproved narrative in the record, flagged by its status.
    #[default]
    EmitUnvalidated,
    /// Emit no narrative for the topic.
    Drop,
}

/// Tunables for a pipeline run.
#[derive(Debug, Clone)]
pub struct PipelineConfig {
    /// Retrieval depth over the topic's short texts.
    pub k_short: usize,
    /// Retrieval depth over the news corpus.
    pub k_news: usize,
    /// Refine iterations allowed after the initial extraction; at least 1.
    pub max_refines: usize,
    pub bm25_k1: f64,
    pub bm25_b: f64,
    pub fail_policy: FailPolicy,
    /// Retry budget per backend call.
    pub max_retries: u32,
    pub timeout: Duration,
    /// Concurrent topic workers in `run_all`.
    pub parallelism: usize,
    /// Record wall-clock per topic; off by default so reports are
    /// byte-reproducible.
    pub include_timings: bool,
    pub extract_template: PromptTemplate,
    pub validate_template: PromptTemplate,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            k_short: 10,
            k_news: 5,
            max_refines: 100,
            bm25_k1: 1.2,
            bm25_b: 0.75,
            fail_policy: FailPolicy::default(),
            max_retries: 2,
            timeout: Duration::from_secs(120),
            parallelism: 1,
            include_timings: false,
            extract_template: PromptTemplate::extract_default(),
            validate_template: PromptTemplate::validate_default(),
        }
    }
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
    #[error("validator output unusable after {attempts} attempts: {reason}")]
    UnparseableVerdict { attempts: u32, reason: String },
    #[error("no short-text documents retrieved for topic `{0}`")]
    EmptyShortContext(String),
}

/// Result of one extraction (or refinement) call.
#[derive(Debug, Clone)]
pub enum ExtractOutcome {
    Narrative(NarrativeSchema),
    /// The model answered with JSON that fails the schema; handled as an
    /// implicit refine trigger, never retried as an error.
    SchemaFailure {
        raw: Value,
        violations: Vec<FieldViolation>,
    },
}

/// Doc id and retrieval score, as kept in run records.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DocScore {
    pub doc_id: String,
    pub score: f64,
}

/// Compact view of the retrieval result for the record.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ContextSummary {
    pub short_text: Vec<DocScore>,
    pub news: Vec<DocScore>,
}

impl ContextSummary {
    fn from_bundle(bundle: &ContextBundle) -> Self {
        let view = |docs: &[crate::retrieval::ScoredDoc]| {
            docs.iter()
                .map(|s| DocScore { doc_id: s.doc.id.clone(), score: s.score })
                .collect()
        };
        Self {
            short_text: view(&bundle.short_text_docs),
            news: view(&bundle.news_docs),
        }
    }
}

/// One extract-validate round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttemptRecord {
    /// 1-based attempt ordinal.
    pub attempt: usize,
    /// Parsed narrative; absent when the model output failed the schema.
    pub narrative: Option<NarrativeSchema>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub schema_violations: Option<Vec<FieldViolation>>,
    pub verdict: ValidationVerdict,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FinalStatus {
    Approved,
    Exhausted,
    Failed,
}

/// Full audit trail of one topic's run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopicRunRecord {
    pub topic_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub query: Option<QueryString>,
    pub context: ContextSummary,
    pub attempts: Vec<AttemptRecord>,
    pub final_status: FinalStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub final_narrative: Option<NarrativeSchema>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure_reason: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timing_ms: Option<u64>,
}

/// Aggregate counts over one run.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunSummary {
    pub topics: usize,
    pub approved: usize,
    pub exhausted: usize,
    pub failed: usize,
}

/// All topic records (sorted by topic id) plus the aggregate summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub records: Vec<TopicRunRecord>,
    pub summary: RunSummary,
}

impl RunReport {
    /// One record per line, stable field order; suitable for golden files.
    pub fn records_jsonl(&self) -> String {
        let mut out = String::new();
        for record in &self.records {
            out.push_str(&serde_json::to_string(record).expect("record serializes"));
            out.push('\n');
        }
        out
    }

    /// Approved (and, under `EmitUnvalidated`, exhausted) narratives, one
    /// JSON object per line.
    pub fn narratives_jsonl(&self) -> String {
        let mut out = String::new();
        for record in &self.records {
            if let Some(narrative) = &record.final_narrative {
                out.push_str(&serde_json::to_string(narrative).expect("narrative serializes"));
                out.push('\n');
            }
        }
        out
    }
}

/// The orchestrator: corpus, indices, backends, and config, wired together.
pub struct Pipeline<'a> {
    store: &'a CorpusStore,
    registry: &'a Bm25Registry,
    vector_index: Option<&'a VectorIndex>,
    chat: Arc<dyn ChatProvider>,
    embedder: Option<Arc<dyn EmbeddingBackend>>,
    config: PipelineConfig,
}

impl<'a> Pipeline<'a> {
    /// Wire up a pipeline. Pass `None` for the vector side to run without a
    /// news corpus (the validator then sees only short texts).
    pub fn new(
        store: &'a CorpusStore,
        registry: &'a Bm25Registry,
        vector_index: Option<&'a VectorIndex>,
        chat: Arc<dyn ChatProvider>,
        embedder: Option<Arc<dyn EmbeddingBackend>>,
        config: PipelineConfig,
    ) -> Self {
        assert!(config.max_refines >= 1, "max_refines must be at least 1");
        Self {
            store,
            registry,
            vector_index,
            chat,
            embedder,
            config,
        }
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    fn request(&self, system: String, user: String, schema: Value) -> BackendRequest {
        BackendRequest {
            system_message: system,
            user_message: user,
            output_schema: Some(schema),
            timeout: self.config.timeout,
            max_retries: self.config.max_retries,
        }
    }

    /// Retrieve both context halves for a topic.
    fn retrieve_context(&self, query: &QueryString) -> Result<ContextBundle, PipelineError> {
        let short = self.registry.retrieve(query, self.config.k_short)?;
        let news = match (self.vector_index, self.embedder.as_deref()) {
            (Some(index), Some(embedder)) => index.retrieve(query, embedder, self.config.k_news)?,
            _ => Vec::new(),
        };
        Ok(assemble_context(&query.topic_id, short, news))
    }

    /// One extraction call over D_S. Schema failures come back as data.
    fn extraction_call(
        &self,
        topic_id: &str,
        short_docs: &[&Document],
        backend: &dyn ChatBackend,
    ) -> Result<ExtractOutcome, PipelineError> {
        let (system, user) = render_extract_prompt(&self.config.extract_template, short_docs)?;
        let raw = complete_structured(backend, &self.request(system, user, narrative_output_schema()))?;
        Ok(match parse_narrative(&raw, topic_id) {
            Ok(narrative) => ExtractOutcome::Narrative(narrative),
            Err(violations) => ExtractOutcome::SchemaFailure { raw, violations },
        })
    }

    /// Re-extract after a refine verdict. The prompt is the extraction
    /// prompt, unchanged, over the same D_S; the result replaces `previous`.
    pub fn refine_step(
        &self,
        previous: &NarrativeSchema,
        short_docs: &[&Document],
        backend: &dyn ChatBackend,
    ) -> Result<ExtractOutcome, PipelineError> {
        self.extraction_call(&previous.topic_id, short_docs, backend)
    }

    /// Validate one narrative against the combined context D.
    ///
    /// A narrative failing the local field check gets a refine verdict
    /// immediately, with no model call. Otherwise the validator prompt runs;
    /// unusable verdict output is retried within the configured budget.
    pub fn validate_step(
        &self,
        narrative: &NarrativeSchema,
        context: &ContextBundle,
        backend: &dyn ChatBackend,
    ) -> Result<ValidationVerdict, PipelineError> {
        let local: Vec<FieldViolation> = local_field_violations(narrative);
        if !local.is_empty() {
            return Ok(ValidationVerdict {
                label: VerdictLabel::Refine,
                explanation: violations_summary(&local),
            });
        }
        let combined = context.combined();
        let (system, user) = render_validate_prompt(&self.config.validate_template, narrative, &combined)?;
        let request = self.request(system, user, verdict_output_schema());
        let mut last_reason = String::new();
        for _ in 0..=self.config.max_retries {
            let raw = complete_structured(backend, &request)?;
            match parse_verdict(&raw) {
                Ok(verdict) => return Ok(verdict),
                Err(failure) => {
                    log::warn!("topic {}: {}", narrative.topic_id, failure.reason);
                    last_reason = failure.reason;
                }
            }
        }
        Err(PipelineError::UnparseableVerdict {
            attempts: self.config.max_retries + 1,
            reason: last_reason,
        })
    }

    /// Run the full loop for one topic. Failures land in the record.
    pub fn run_topic(&self, topic: &TopicCluster) -> TopicRunRecord {
        let started = Instant::now();
        let mut record = TopicRunRecord {
            topic_id: topic.topic_id.clone(),
            query: None,
            context: ContextSummary::default(),
            attempts: Vec::new(),
            final_status: FinalStatus::Failed,
            final_narrative: None,
            failure_reason: None,
            timing_ms: None,
        };
        let outcome = self.run_topic_inner(topic, &mut record);
        if let Err(e) = outcome {
            record.final_status = FinalStatus::Failed;
            record.final_narrative = None;
            record.failure_reason = Some(e.to_string());
            log::warn!("topic {} failed: {e}", topic.topic_id);
        }
        if self.config.include_timings {
            record.timing_ms = Some(started.elapsed().as_millis() as u64);
        }
        record
    }

    fn run_topic_inner(
        &self,
        topic: &TopicCluster,
        record: &mut TopicRunRecord,
    ) -> Result<(), PipelineError> {
        let query = build_query(topic)?;
        record.query = Some(query.clone());
        let bundle = self.retrieve_context(&query)?;
        record.context = ContextSummary::from_bundle(&bundle);
        if bundle.short_text_docs.is_empty() {
            return Err(PipelineError::EmptyShortContext(topic.topic_id.clone()));
        }
        let short_docs: Vec<&Document> = bundle.short_text_docs.iter().map(|s| &s.doc).collect();
        let backend = self.chat.for_topic(&topic.topic_id);

        let mut latest_narrative: Option<NarrativeSchema> = None;
        for attempt in 1..=self.config.max_refines + 1 {
            let outcome = self.extraction_call(&topic.topic_id, &short_docs, backend.as_ref())?;
            match outcome {
                ExtractOutcome::Narrative(narrative) => {
                    let verdict = self.validate_step(&narrative, &bundle, backend.as_ref())?;
                    let approved = verdict.label == VerdictLabel::Approve;
                    record.attempts.push(AttemptRecord {
                        attempt,
                        narrative: Some(narrative.clone()),
                        schema_violations: None,
                        verdict,
                    });
                    latest_narrative = Some(narrative.clone());
                    if approved {
                        record.final_status = FinalStatus::Approved;
                        record.final_narrative = Some(narrative);
                        return Ok(());
                    }
                }
                ExtractOutcome::SchemaFailure { violations, .. } => {
                    record.attempts.push(AttemptRecord {
                        attempt,
                        narrative: None,
                        schema_violations: Some(violations.clone()),
                        verdict: ValidationVerdict {
                            label: VerdictLabel::Refine,
                            explanation: violations_summary(&violations),
                        },
                    });
                    latest_narrative = None;
                }
            }
        }
        record.final_status = FinalStatus::Exhausted;
        record.final_narrative = match self.config.fail_policy {
            FailPolicy::EmitUnvalidated => latest_narrative,
            FailPolicy::Drop => None,
        };
        log::warn!(
            "topic {}: refine cap of {} reached without approval",
            topic.topic_id,
            self.config.max_refines
        );
        Ok(())
    }

    /// Run every topic, independently and possibly in parallel; records come
    /// back sorted by topic id regardless of scheduling.
    pub fn run_all(&self) -> RunReport {
        let topics: Vec<&TopicCluster> = self.store.topics().collect();
        let workers = self.config.parallelism.clamp(1, topics.len().max(1));
        let mut slots: Vec<Option<TopicRunRecord>> = (0..topics.len()).map(|_| None).collect();
        if workers <= 1 {
            for (slot, topic) in slots.iter_mut().zip(&topics) {
                *slot = Some(self.run_topic(topic));
            }
        } else {
            let next = AtomicUsize::new(0);
            let (tx, rx) = mpsc::channel::<(usize, TopicRunRecord)>();
            std::thread::scope(|scope| {
                for _ in 0..workers {
                    let tx = tx.clone();
                    let next = &next;
                    let topics = &topics;
                    scope.spawn(move || loop {
                        let idx = next.fetch_add(1, Ordering::Relaxed);
                        let Some(topic) = topics.get(idx) else { break };
                        let record = self.run_topic(topic);
                        if tx.send((idx, record)).is_err() {
                            break;
                        }
                    });
                }
            });
            drop(tx);
            for (idx, record) in rx {
                slots[idx] = Some(record);
            }
        }
        let records: Vec<TopicRunRecord> = slots.into_iter().map(|s| s.expect("every topic ran")).collect();
        let mut summary = RunSummary { topics: records.len(), ..RunSummary::default() };
        for record in &records {
            match record.final_status {
                FinalStatus::Approved => summary.approved += 1,
                FinalStatus::Exhausted => summary.exhausted += 1,
                FinalStatus::Failed => summary.failed += 1,
            }
        }
        RunReport { records, summary }
    }
}

/// Field-level check on an already-typed narrative (catches hand-built
/// values with blank fields; parsed narratives always pass the four
/// extracted fields, and the pipeline always supplies the topic id).
fn local_field_violations(narrative: &NarrativeSchema) -> Vec<FieldViolation> {
    use crate::narrative::FieldProblem;
    let mut violations = Vec::new();
    for (name, value) in [
        ("topic_id", &narrative.topic_id),
        ("actor", &narrative.actor),
        ("action", &narrative.action),
        ("event", &narrative.event),
        ("description", &narrative.description),
    ] {
        if value.trim().is_empty() {
            violations.push(FieldViolation { field: name.into(), problem: FieldProblem::Empty });
        }
    }
    violations
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::mock::{
        ExhaustPolicy, HashEmbedder, MockScript, ScriptedMock, ScriptedResponse,
    };
    use crate::corpus::ShortTextFormat;
    use std::io::Write as _;

    fn narrative_json(actor: &str, action: &str, event: &str, description: &str) -> Value {
        serde_json::json!({
            "actor": actor, "action": action, "event": event, "description": description
        })
    }

    fn approve(explanation: &str) -> ScriptedResponse {
        ScriptedResponse::Json {
            value: serde_json::json!({"label": "approved", "explanation": explanation}),
        }
    }

    fn refine(explanation: &str) -> ScriptedResponse {
        ScriptedResponse::Json {
            value: serde_json::json!({"label": "refine", "explanation": explanation}),
        }
    }

    fn json(value: Value) -> ScriptedResponse {
        ScriptedResponse::Json { value }
    }

    /// Store with two topics of short texts and two news articles.
    fn fixture_store(dir: &std::path::Path) -> CorpusStore {
        let shorts = dir.join("short.jsonl");
        let mut f = std::fs::File::create(&shorts).unwrap();
        for (id, text, topic) in [
            ("s1", "gunfire reported near the hotel tonight", "t1"),
            ("s2", "hotel lockdown after gunfire downtown", "t1"),
            ("s3", "crowd fled the concert after shots", "t1"),
            ("s4", "flood waters rising along the coast", "t2"),
            ("s5", "evacuations ordered before the flood peak", "t2"),
        ] {
            writeln!(f, "{{\"id\": \"{id}\", \"text\": \"{text}\", \"topic_id\": \"{topic}\"}}").unwrap();
        }
        let topics = dir.join("topics.jsonl");
        std::fs::write(
            &topics,
            concat!(
                "{\"topic_id\": \"t1\", \"keywords\": [\"gunfire\", \"hotel\"]}\n",
                "{\"topic_id\": \"t2\", \"keywords\": [\"flood\", \"evacuations\"]}\n",
            ),
        )
        .unwrap();
        let news = dir.join("news.jsonl");
        std::fs::write(
            &news,
            concat!(
                "{\"id\": \"n1\", \"text\": \"police confirm gunfire at the hotel with no ar15 found\"}\n",
                "{\"id\": \"n2\", \"text\": \"flood warnings extended as rivers crest\"}\n",
            ),
        )
        .unwrap();
        let mut store = CorpusStore::new();
        store.ingest_short_texts(&shorts, ShortTextFormat::Jsonl).unwrap();
        store.ingest_topics(&topics).unwrap();
        store.ingest_news(&news).unwrap();
        store
    }

    struct Fixture {
        store: CorpusStore,
        registry: Bm25Registry,
        index: VectorIndex,
        embedder: Arc<HashEmbedder>,
    }

    fn fixture(dir: &std::path::Path) -> Fixture {
        let store = fixture_store(dir);
        let registry = Bm25Registry::build(&store, 1.2, 0.75);
        let embedder = Arc::new(HashEmbedder::new(8, 99));
        let news: Vec<Document> = store.news().cloned().collect();
        let index = VectorIndex::build(&news, embedder.as_ref()).unwrap();
        Fixture { store, registry, index, embedder }
    }

    fn pipeline<'a>(fx: &'a Fixture, mock: &ScriptedMock, config: PipelineConfig) -> Pipeline<'a> {
        Pipeline::new(
            &fx.store,
            &fx.registry,
            Some(&fx.index),
            Arc::new(mock.clone()),
            Some(fx.embedder.clone()),
            config,
        )
    }

    fn config(max_refines: usize) -> PipelineConfig {
        PipelineConfig { max_refines, max_retries: 0, ..PipelineConfig::default() }
    }

    #[test]
    fn happy_path_approves_on_first_attempt() {
        let dir = tempfile::tempdir().unwrap();
        let fx = fixture(dir.path());
        let mock = ScriptedMock::new(MockScript::for_topic(
            "t1",
            vec![
                json(narrative_json("user", "reports gunfire", "hotel shooting", "The user reports gunfire at a hotel.")),
                approve("consistent with the context and does not contradict"),
            ],
        ));
        let p = pipeline(&fx, &mock, config(100));
        let topic = fx.store.topic("t1").unwrap();
        let record = p.run_topic(topic);

        assert_eq!(record.final_status, FinalStatus::Approved);
        assert_eq!(record.attempts.len(), 1);
        assert_eq!(record.query.as_ref().unwrap().text, "gunfire hotel");
        let narrative = record.final_narrative.unwrap();
        assert_eq!(narrative.topic_id, "t1");
        assert_eq!(narrative.actor, "user");
        assert!(!record.context.short_text.is_empty());
        assert!(!record.context.news.is_empty());
        assert!(record.timing_ms.is_none());
    }

    #[test]
    fn extractor_sees_only_short_texts_and_validator_sees_combined_context() {
        let dir = tempfile::tempdir().unwrap();
        let fx = fixture(dir.path());
        let mock = ScriptedMock::new(MockScript::for_topic(
            "t1",
            vec![
                json(narrative_json("user", "reports", "gunfire", "The user reports gunfire.")),
                approve("fits"),
            ],
        ));
        let p = pipeline(&fx, &mock, config(100));
        p.run_topic(fx.store.topic("t1").unwrap());

        let log = mock.call_log();
        assert_eq!(log.len(), 2);
        let extract_call = &log[0];
        assert!(extract_call.user_message.contains("gunfire reported near the hotel tonight"));
        assert!(!extract_call.user_message.contains("police confirm"));
        let validate_call = &log[1];
        assert!(validate_call.user_message.contains("police confirm gunfire at the hotel"));
        assert!(validate_call.user_message.contains("gunfire reported near the hotel tonight"));
    }

    #[test]
    fn refine_verdict_triggers_reextraction_then_approval() {
        let dir = tempfile::tempdir().unwrap();
        let fx = fixture(dir.path());
        let mock = ScriptedMock::new(MockScript::for_topic(
            "t1",
            vec![
                json(narrative_json("shooter", "used an ar15", "office building", "A shooter used an ar15 in an office building.")),
                refine("The narrative includes hallucinations not present in the context"),
                json(narrative_json("shooter", "opened fire", "Santa Fe High School", "A shooter opened fire at Santa Fe High School.")),
                approve("consistent with the context"),
            ],
        ));
        let p = pipeline(&fx, &mock, config(100));
        let record = p.run_topic(fx.store.topic("t1").unwrap());

        assert_eq!(record.final_status, FinalStatus::Approved);
        assert_eq!(record.attempts.len(), 2);
        assert!(record.attempts[0].verdict.explanation.contains("hallucinations"));
        assert_eq!(record.attempts[0].verdict.label, VerdictLabel::Refine);
        assert_eq!(record.final_narrative.unwrap().event, "Santa Fe High School");
        assert_eq!(mock.calls_for_topic("t1"), 4);
    }

    #[test]
    fn refine_cap_yields_exhausted_with_attempt_count() {
        let dir = tempfile::tempdir().unwrap();
        let fx = fixture(dir.path());
        let script = MockScript {
            on_exhausted: ExhaustPolicy::Cycle,
            ..MockScript::for_topic(
                "t1",
                vec![
                    json(narrative_json("user", "reports", "event", "The user reports an event.")),
                    refine("still contradicts the context"),
                ],
            )
        };
        let mock = ScriptedMock::new(script);
        let p = pipeline(&fx, &mock, config(3));
        let record = p.run_topic(fx.store.topic("t1").unwrap());

        assert_eq!(record.final_status, FinalStatus::Exhausted);
        assert_eq!(record.attempts.len(), 4);
        assert!(record.final_narrative.is_some());
        assert!(record.attempts.iter().all(|a| a.verdict.label == VerdictLabel::Refine));
    }

    #[test]
    fn drop_policy_discards_the_unapproved_narrative() {
        let dir = tempfile::tempdir().unwrap();
        let fx = fixture(dir.path());
        let script = MockScript {
            on_exhausted: ExhaustPolicy::Cycle,
            ..MockScript::for_topic(
                "t1",
                vec![
                    json(narrative_json("user", "reports", "event", "The user reports an event.")),
                    refine("no"),
                ],
            )
        };
        let mock = ScriptedMock::new(script);
        let cfg = PipelineConfig { fail_policy: FailPolicy::Drop, ..config(1) };
        let p = pipeline(&fx, &mock, cfg);
        let record = p.run_topic(fx.store.topic("t1").unwrap());
        assert_eq!(record.final_status, FinalStatus::Exhausted);
        assert_eq!(record.attempts.len(), 2);
        assert!(record.final_narrative.is_none());
    }

    #[test]
    fn schema_failure_refines_locally_without_a_validator_call() {
        let dir = tempfile::tempdir().unwrap();
        let fx = fixture(dir.path());
        let mock = ScriptedMock::new(MockScript::for_topic(
            "t1",
            vec![
                json(serde_json::json!({"actor": "user", "event": "gunfire"})),
                json(narrative_json("user", "reports", "gunfire", "The user reports gunfire.")),
                approve("fits"),
            ],
        ));
        let p = pipeline(&fx, &mock, config(100));
        let record = p.run_topic(fx.store.topic("t1").unwrap());

        assert_eq!(record.final_status, FinalStatus::Approved);
        assert_eq!(record.attempts.len(), 2);
        let first = &record.attempts[0];
        assert!(first.narrative.is_none());
        assert_eq!(first.verdict.label, VerdictLabel::Refine);
        assert!(first.verdict.explanation.contains("'action' is missing"));
        assert!(first.schema_violations.is_some());
        assert_eq!(mock.calls_for_topic("t1"), 3);
    }

    #[test]
    fn validate_step_short_circuits_invalid_narratives_without_backend_calls() {
        let dir = tempfile::tempdir().unwrap();
        let fx = fixture(dir.path());
        let mock = ScriptedMock::new(MockScript::for_topic("t1", vec![]));
        let p = pipeline(&fx, &mock, config(100));
        let narrative = NarrativeSchema {
            topic_id: "t1".into(),
            actor: "user".into(),
            action: "reports".into(),
            event: "".into(),
            description: "The user reports.".into(),
        };
        let query = build_query(fx.store.topic("t1").unwrap()).unwrap();
        let bundle = p.retrieve_context(&query).unwrap();
        let backend = mock.for_topic("t1");
        let verdict = p.validate_step(&narrative, &bundle, backend.as_ref()).unwrap();
        assert_eq!(verdict.label, VerdictLabel::Refine);
        assert!(verdict.explanation.contains("'event' is empty"));
        assert_eq!(mock.calls_for_topic("t1"), 0);
    }

    #[test]
    fn transport_failure_after_retries_fails_only_that_topic() {
        let dir = tempfile::tempdir().unwrap();
        let fx = fixture(dir.path());
        let mut script = MockScript::for_topic(
            "t1",
            vec![ScriptedResponse::TransportError { message: "connection reset".into() }],
        );
        script.topics.insert(
            "t2".into(),
            vec![
                json(narrative_json("user", "warns", "flood", "The user warns about a flood.")),
                approve("fits"),
            ],
        );
        let mock = ScriptedMock::new(script);
        let p = pipeline(&fx, &mock, config(100));
        let report = p.run_all();

        assert_eq!(report.summary, RunSummary { topics: 2, approved: 1, exhausted: 0, failed: 1 });
        let t1 = &report.records[0];
        assert_eq!(t1.topic_id, "t1");
        assert_eq!(t1.final_status, FinalStatus::Failed);
        assert!(t1.failure_reason.as_ref().unwrap().contains("connection reset"));
        assert!(t1.final_narrative.is_none());
        let t2 = &report.records[1];
        assert_eq!(t2.final_status, FinalStatus::Approved);
    }

    #[test]
    fn topic_without_keywords_fails_cleanly() {
        let dir = tempfile::tempdir().unwrap();
        let shorts = dir.path().join("short.jsonl");
        std::fs::write(&shorts, "{\"text\": \"orphan tweet\", \"topic_id\": \"bare\"}\n").unwrap();
        let mut store = CorpusStore::new();
        store.ingest_short_texts(&shorts, ShortTextFormat::Jsonl).unwrap();
        let registry = Bm25Registry::build(&store, 1.2, 0.75);
        let mock = ScriptedMock::new(MockScript::default());
        let p = Pipeline::new(&store, &registry, None, Arc::new(mock), None, config(100));
        let record = p.run_topic(store.topic("bare").unwrap());
        assert_eq!(record.final_status, FinalStatus::Failed);
        assert!(record.failure_reason.unwrap().contains("keywords"));
        assert!(record.attempts.is_empty());
    }

    #[test]
    fn empty_short_retrieval_fails_the_topic() {
        let dir = tempfile::tempdir().unwrap();
        let fx = fixture(dir.path());
        let mut store = fx.store.clone();
        let topics_extra = dir.path().join("extra_topics.jsonl");
        std::fs::write(&topics_extra, "{\"topic_id\": \"t3\", \"keywords\": [\"unmatched\"]}\n").unwrap();
        store.ingest_topics(&topics_extra).unwrap();
        let registry = Bm25Registry::build(&store, 1.2, 0.75);
        let mock = ScriptedMock::new(MockScript::default());
        let p = Pipeline::new(&store, &registry, None, Arc::new(mock), None, config(100));
        let record = p.run_topic(store.topic("t3").unwrap());
        assert_eq!(record.final_status, FinalStatus::Failed);
        assert!(record.failure_reason.unwrap().contains("no short-text documents"));
    }

    #[test]
    fn missing_news_index_leaves_news_half_empty() {
        let dir = tempfile::tempdir().unwrap();
        let fx = fixture(dir.path());
        let mock = ScriptedMock::new(MockScript::for_topic(
            "t1",
            vec![
                json(narrative_json("user", "reports", "gunfire", "The user reports gunfire.")),
                approve("fits"),
            ],
        ));
        let p = Pipeline::new(&fx.store, &fx.registry, None, Arc::new(mock.clone()), None, config(100));
        let record = p.run_topic(fx.store.topic("t1").unwrap());
        assert_eq!(record.final_status, FinalStatus::Approved);
        assert!(record.context.news.is_empty());
        let validate_call = &mock.call_log()[1];
        assert!(!validate_call.user_message.contains("police confirm"));
    }

    #[test]
    fn run_all_is_deterministic_across_parallelism_levels() {
        let dir = tempfile::tempdir().unwrap();
        let fx = fixture(dir.path());
        let script = MockScript {
            on_exhausted: ExhaustPolicy::Cycle,
            topics: [(
                "default".to_string(),
                vec![
                    json(narrative_json("user", "reports", "an event", "The user reports an event.")),
                    approve("fits"),
                ],
            )]
            .into_iter()
            .collect(),
            model_name: None,
            max_input_chars: None,
        };
        let serial = {
            let mock = ScriptedMock::new(script.clone());
            let p = pipeline(&fx, &mock, config(100));
            p.run_all()
        };
        let parallel = {
            let mock = ScriptedMock::new(script);
            let cfg = PipelineConfig { parallelism: 4, ..config(100) };
            let p = pipeline(&fx, &mock, cfg);
            p.run_all()
        };
        assert_eq!(
            serde_json::to_string(&serial).unwrap(),
            serde_json::to_string(&parallel).unwrap()
        );
        assert_eq!(serial.records_jsonl(), parallel.records_jsonl());
        assert_eq!(serial.summary.approved, 2);
    }

    #[test]
    fn reports_serialize_identically_across_runs() {
        let dir = tempfile::tempdir().unwrap();
        let fx = fixture(dir.path());
        let script = MockScript::with_default(vec![
            json(narrative_json("user", "reports", "an event", "The user reports an event.")),
            approve("fits"),
        ]);
        let run = || {
            let mock = ScriptedMock::new(script.clone());
            let p = pipeline(&fx, &mock, config(100));
            p.run_all().records_jsonl()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn narratives_jsonl_lists_only_emitted_narratives() {
        let dir = tempfile::tempdir().unwrap();
        let fx = fixture(dir.path());
        let mut script = MockScript::for_topic(
            "t1",
            vec![
                json(narrative_json("user", "reports", "gunfire", "The user reports gunfire.")),
                approve("fits"),
            ],
        );
        script
            .topics
            .insert("t2".into(), vec![ScriptedResponse::TransportError { message: "down".into() }]);
        let mock = ScriptedMock::new(script);
        let p = pipeline(&fx, &mock, config(100));
        let report = p.run_all();
        let narratives = report.narratives_jsonl();
        let lines: Vec<&str> = narratives.lines().collect();
        assert_eq!(lines.len(), 1);
        assert!(lines[0].contains("\"topic_id\":\"t1\""));
    }

    #[test]
    fn refine_step_reuses_the_extraction_prompt() {
        let dir = tempfile::tempdir().unwrap();
        let fx = fixture(dir.path());
        let mock = ScriptedMock::new(MockScript::for_topic(
            "t1",
            vec![
                json(narrative_json("a", "b", "c", "d.")),
                json(narrative_json("a", "b", "c", "d.")),
            ],
        ));
        let p = pipeline(&fx, &mock, config(100));
        let query = build_query(fx.store.topic("t1").unwrap()).unwrap();
        let bundle = p.retrieve_context(&query).unwrap();
        let short_docs: Vec<&Document> = bundle.short_text_docs.iter().map(|s| &s.doc).collect();
        let backend = mock.for_topic("t1");
        let first = p.extraction_call("t1", &short_docs, backend.as_ref()).unwrap();
        let ExtractOutcome::Narrative(narrative) = first else { panic!("expected narrative") };
        let second = p.refine_step(&narrative, &short_docs, backend.as_ref()).unwrap();
        let ExtractOutcome::Narrative(refined) = second else { panic!("expected narrative") };
        assert_eq!(narrative, refined);
        let log = mock.call_log();
        assert_eq!(log[0].user_message, log[1].user_message);
        assert_eq!(log[0].system_message, log[1].system_message);
    }
}
