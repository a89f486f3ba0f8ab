//! Deterministic offline backends: a scripted chat mock that replays
//! per-topic response queues, and a seeded hash embedder.
//!
//! Scripts are plain JSON files, so a full pipeline trace is expressible as
//! a committed fixture:
//!
//! ```json
//! {
//!   "on_exhausted": "error",
//!   "topics": {
//!     "t1": [
//!       {"kind": "json", "value": {"actor": "user", "...": "..."}},
//!       {"kind": "json", "value": {"label": "approved", "explanation": "fits"}}
//!     ],
//!     "default": [
//!       {"kind": "text", "text": "plain prose, not JSON"},
//!       {"kind": "transport_error", "message": "connection reset"}
//!     ]
//!   }
//! }
//! ```
//!
//! A topic without its own queue gets a private copy of `default`, so
//! parallel runs stay deterministic regardless of topic scheduling.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::{Arc, Mutex};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{BackendError, BackendRequest, ChatBackend, ChatProvider, EmbeddingBackend};

/// Queue key used for topics without a dedicated script entry.
pub const DEFAULT_TOPIC_KEY: &str = "default";

/// One canned backend response.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ScriptedResponse {
    /// Returned verbatim as the model's JSON output.
    Json { value: Value },
    /// Returned as a non-JSON body; surfaces as `MalformedOutput`.
    Text { text: String },
    /// Simulates a failed request; surfaces as `Transport`.
    TransportError { message: String },
}

/// What a drained queue does on the next call.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExhaustPolicy {
    /// Fail with `ScriptExhausted`.
    #[default]
    Error,
    /// Restart the queue from the top.
    Cycle,
}

/// A replay script: per-topic ordered response queues.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct MockScript {
    pub topics: BTreeMap<String, Vec<ScriptedResponse>>,
    #[serde(default)]
    pub on_exhausted: ExhaustPolicy,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model_name: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_input_chars: Option<usize>,
}

impl MockScript {
    /// Script with one explicit topic queue.
    pub fn for_topic(topic_id: &str, responses: Vec<ScriptedResponse>) -> Self {
        let mut topics = BTreeMap::new();
        topics.insert(topic_id.to_string(), responses);
        Self { topics, ..Self::default() }
    }

    /// Script whose `default` queue serves every topic.
    pub fn with_default(responses: Vec<ScriptedResponse>) -> Self {
        Self::for_topic(DEFAULT_TOPIC_KEY, responses)
    }

    pub fn from_file(path: &Path) -> Result<Self, BackendError> {
        let bytes = std::fs::read(path)
            .map_err(|e| BackendError::BadScript(format!("{}: {e}", path.display())))?;
        serde_json::from_slice(&bytes)
            .map_err(|e| BackendError::BadScript(format!("{}: {e}", path.display())))
    }
}

/// One full chat call as seen by the mock.
#[derive(Debug, Clone)]
pub struct CallRecord {
    pub topic_id: String,
    pub system_message: String,
    pub user_message: String,
    pub schema_supplied: bool,
}

struct QueueState {
    responses: Vec<ScriptedResponse>,
    cursor: usize,
}

struct MockInner {
    script: MockScript,
    queues: Mutex<BTreeMap<String, QueueState>>,
    log: Mutex<Vec<CallRecord>>,
}

/// Shareable scripted chat backend; clone freely, state is common.
#[derive(Clone)]
pub struct ScriptedMock {
    inner: Arc<MockInner>,
}

impl ScriptedMock {
    pub fn new(script: MockScript) -> Self {
        Self {
            inner: Arc::new(MockInner {
                script,
                queues: Mutex::new(BTreeMap::new()),
                log: Mutex::new(Vec::new()),
            }),
        }
    }

    pub fn from_file(path: &Path) -> Result<Self, BackendError> {
        Ok(Self::new(MockScript::from_file(path)?))
    }

    /// Every chat call made so far, in dispatch order.
    pub fn call_log(&self) -> Vec<CallRecord> {
        self.inner.log.lock().unwrap().clone()
    }

    pub fn calls_for_topic(&self, topic_id: &str) -> usize {
        self.inner
            .log
            .lock()
            .unwrap()
            .iter()
            .filter(|c| c.topic_id == topic_id)
            .count()
    }
}

impl ChatProvider for ScriptedMock {
    fn for_topic(&self, topic_id: &str) -> Arc<dyn ChatBackend> {
        Arc::new(TopicHandle {
            inner: self.inner.clone(),
            topic_id: topic_id.to_string(),
        })
    }
}

/// Chat view bound to one topic's queue.
struct TopicHandle {
    inner: Arc<MockInner>,
    topic_id: String,
}

impl ChatBackend for TopicHandle {
    fn model_name(&self) -> &str {
        self.inner.script.model_name.as_deref().unwrap_or("scripted-mock")
    }

    fn supports_json_schema(&self) -> bool {
        true
    }

    fn max_input_chars(&self) -> usize {
        self.inner.script.max_input_chars.unwrap_or(1_000_000)
    }

    fn complete(&self, request: &BackendRequest) -> Result<Value, BackendError> {
        self.inner.log.lock().unwrap().push(CallRecord {
            topic_id: self.topic_id.clone(),
            system_message: request.system_message.clone(),
            user_message: request.user_message.clone(),
            schema_supplied: request.output_schema.is_some(),
        });
        let mut queues = self.inner.queues.lock().unwrap();
        let queue = queues.entry(self.topic_id.clone()).or_insert_with(|| {
            let responses = self
                .inner
                .script
                .topics
                .get(&self.topic_id)
                .or_else(|| self.inner.script.topics.get(DEFAULT_TOPIC_KEY))
                .cloned()
                .unwrap_or_default();
            QueueState { responses, cursor: 0 }
        });
        if queue.responses.is_empty() {
            return Err(BackendError::ScriptExhausted(self.topic_id.clone()));
        }
        let idx = if queue.cursor < queue.responses.len() {
            queue.cursor
        } else {
            match self.inner.script.on_exhausted {
                ExhaustPolicy::Error => {
                    return Err(BackendError::ScriptExhausted(self.topic_id.clone()))
                }
                ExhaustPolicy::Cycle => queue.cursor % queue.responses.len(),
            }
        };
        queue.cursor += 1;
        match queue.responses[idx].clone() {
            ScriptedResponse::Json { value } => Ok(value),
            ScriptedResponse::Text { text } => Err(BackendError::MalformedOutput(text)),
            ScriptedResponse::TransportError { message } => Err(BackendError::Transport(message)),
        }
    }
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn fnv1a64(seed: u64, token: &str) -> u64 {
    let mut h = FNV_OFFSET;
    for b in seed.to_le_bytes().into_iter().chain(token.bytes()) {
        h ^= u64::from(b);
        h = h.wrapping_mul(FNV_PRIME);
    }
    h
}

/// Deterministic embedding mock: each whitespace token hashes (FNV-1a) to a
/// seed for a ChaCha8 draw of uniform components in [-1, 1), and the token
/// vectors are mean-pooled. Equal texts embed equally on every platform.
#[derive(Debug, Clone)]
pub struct HashEmbedder {
    dimension: usize,
    seed: u64,
    name: String,
}

impl HashEmbedder {
    pub fn new(dimension: usize, seed: u64) -> Self {
        assert!(dimension > 0, "embedding dimension must be positive");
        Self {
            dimension,
            seed,
            name: format!("hash-d{dimension}-s{seed}"),
        }
    }
}

impl EmbeddingBackend for HashEmbedder {
    fn model_name(&self) -> &str {
        &self.name
    }

    fn dimension(&self) -> usize {
        self.dimension
    }

    fn embed(&self, text: &str) -> Result<Vec<f32>, BackendError> {
        let tokens: Vec<&str> = text.split_whitespace().collect();
        if tokens.is_empty() {
            return Err(BackendError::EmptyInput);
        }
        let mut acc = vec![0.0f64; self.dimension];
        for token in &tokens {
            let mut rng = ChaCha8Rng::seed_from_u64(fnv1a64(self.seed, token));
            for slot in &mut acc {
                *slot += rng.random_range(-1.0f64..1.0);
            }
        }
        let n = tokens.len() as f64;
        Ok(acc.into_iter().map(|v| (v / n) as f32).collect())
    }
}
