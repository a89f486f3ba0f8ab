//! Generation and embedding contracts.
//!
//! Everything that talks to a model goes through two small traits:
//! [`ChatBackend`] for structured chat completion and [`EmbeddingBackend`]
//! for text embeddings. The rest of the crate performs no network I/O of its
//! own. Two implementations ship here: an HTTP client for local model
//! servers ([`http`]) and a deterministic scripted mock for offline runs and
//! golden tests ([`mock`]).

pub mod http;
pub mod mock;

use std::sync::Arc;
use std::time::Duration;

use serde_json::Value;
use thiserror::Error;

/// Env var pointing at the chat/embedding server base URL.
pub const ENV_LLM_URL: &str = "NTLRAG_LLM_URL";
/// Env var naming the chat model.
pub const ENV_LLM_MODEL: &str = "NTLRAG_LLM_MODEL";
/// Env var naming the embedding model.
pub const ENV_EMBED_MODEL: &str = "NTLRAG_EMBED_MODEL";
/// Env var with the request timeout in seconds.
pub const ENV_TIMEOUT_SECS: &str = "NTLRAG_TIMEOUT_SECS";

/// Base delay of the capped exponential backoff between retries.
const BACKOFF_BASE: Duration = Duration::from_millis(50);
/// Upper bound on a single backoff sleep.
const BACKOFF_CAP: Duration = Duration::from_secs(1);

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("backend returned non-JSON output: {0}")]
    MalformedOutput(String),
    #[error("input length {length} exceeds backend limit {max}")]
    InputTooLong { length: usize, max: usize },
    #[error("embedding input is empty")]
    EmptyInput,
    #[error("scripted backend has no responses left for topic `{0}`")]
    ScriptExhausted(String),
    #[error("invalid backend script: {0}")]
    BadScript(String),
}

impl BackendError {
    /// Transient failures worth another attempt: transport problems and
    /// non-JSON output. Everything else is deterministic.
    pub fn is_retryable(&self) -> bool {
        matches!(self, Self::Transport(_) | Self::MalformedOutput(_))
    }
}

/// One structured completion request.
#[derive(Debug, Clone)]
pub struct BackendRequest {
    pub system_message: String,
    pub user_message: String,
    /// JSON schema the model output must follow.
    pub output_schema: Option<Value>,
    pub timeout: Duration,
    /// Additional attempts after the first, for retryable failures only.
    pub max_retries: u32,
}

impl Default for BackendRequest {
    fn default() -> Self {
        Self {
            system_message: String::new(),
            user_message: String::new(),
            output_schema: None,
            timeout: Duration::from_secs(120),
            max_retries: 2,
        }
    }
}

/// Structured chat completion service.
pub trait ChatBackend: Send + Sync {
    fn model_name(&self) -> &str;
    /// Whether the backend honors `output_schema`; prompts carry the format
    /// rules either way.
    fn supports_json_schema(&self) -> bool;
    /// Combined system+user length the backend accepts.
    fn max_input_chars(&self) -> usize;
    /// Single dispatch, no retries; `complete_structured` adds the retry
    /// policy on top.
    fn complete(&self, request: &BackendRequest) -> Result<Value, BackendError>;
}

/// Text embedding service.
pub trait EmbeddingBackend: Send + Sync {
    fn model_name(&self) -> &str;
    fn dimension(&self) -> usize;
    fn embed(&self, text: &str) -> Result<Vec<f32>, BackendError>;
}

/// Hands out the chat backend to use for one topic's calls.
///
/// A shared HTTP handle returns itself for every topic; the scripted mock
/// returns a view bound to that topic's response queue.
pub trait ChatProvider: Send + Sync {
    fn for_topic(&self, topic_id: &str) -> Arc<dyn ChatBackend>;
}

/// The trivial provider: every topic talks to the same backend.
#[derive(Clone)]
pub struct SharedChatProvider(pub Arc<dyn ChatBackend>);

impl ChatProvider for SharedChatProvider {
    fn for_topic(&self, _topic_id: &str) -> Arc<dyn ChatBackend> {
        self.0.clone()
    }
}

/// Run one structured completion with the request's retry budget.
///
/// Checks the combined input length up front, then dispatches up to
/// `max_retries + 1` times, sleeping with capped exponential backoff between
/// attempts. Only retryable errors consume the budget; others return
/// immediately.
pub fn complete_structured(
    backend: &dyn ChatBackend,
    request: &BackendRequest,
) -> Result<Value, BackendError> {
    let length = request.system_message.len() + request.user_message.len();
    let max = backend.max_input_chars();
    if length > max {
        return Err(BackendError::InputTooLong { length, max });
    }
    let mut delay = BACKOFF_BASE;
    let mut attempt = 0;
    loop {
        match backend.complete(request) {
            Ok(value) => return Ok(value),
            Err(e) if e.is_retryable() && attempt < request.max_retries => {
                log::debug!("attempt {} failed ({e}), retrying in {delay:?}", attempt + 1);
                std::thread::sleep(delay);
                delay = (delay * 2).min(BACKOFF_CAP);
                attempt += 1;
            }
            Err(e) => return Err(e),
        }
    }
}

/// Embed one non-empty text.
pub fn embed_text(backend: &dyn EmbeddingBackend, text: &str) -> Result<Vec<f32>, BackendError> {
    if text.trim().is_empty() {
        return Err(BackendError::EmptyInput);
    }
    backend.embed(text)
}
