//! JSON-over-HTTP clients for a local model server.
//!
//! The chat client POSTs to `{base}/api/chat` with a messages array, the
//! JSON schema in `format`, and temperature pinned to 0; the reply's
//! `message.content` is parsed as the structured output. The embedding
//! client POSTs to `{base}/api/embeddings` and reads the `embedding` float
//! array. Both speak the wire shape of common local model servers, so a
//! stock install works without an adapter layer.

use std::sync::OnceLock;
use std::time::Duration;

use serde_json::{json, Value};
use ureq::Agent;

use super::{BackendError, BackendRequest, ChatBackend, EmbeddingBackend};

/// Default local model server address.
pub const DEFAULT_BASE_URL: &str = "http://localhost:11434";
/// Default chat model tag.
pub const DEFAULT_CHAT_MODEL: &str = "llama3.2";
/// Default embedding model tag.
pub const DEFAULT_EMBED_MODEL: &str = "nomic-embed-text";

fn transport(e: impl std::fmt::Display) -> BackendError {
    BackendError::Transport(e.to_string())
}

fn clip(s: &str) -> String {
    const LIMIT: usize = 200;
    if s.len() <= LIMIT {
        s.to_string()
    } else {
        let mut end = LIMIT;
        while !s.is_char_boundary(end) {
            end -= 1;
        }
        format!("{}…", &s[..end])
    }
}

/// Structured chat over HTTP.
pub struct HttpChatBackend {
    agent: Agent,
    base_url: String,
    model: String,
    max_input_chars: usize,
}

impl HttpChatBackend {
    pub fn new(base_url: &str, model: &str) -> Self {
        Self {
            agent: Agent::config_builder().build().into(),
            base_url: base_url.trim_end_matches('/').to_string(),
            model: model.to_string(),
            max_input_chars: 24_000,
        }
    }

    /// Adjust the combined prompt-length cap for models with shorter or
    /// longer accepted input sequences.
    pub fn with_max_input_chars(mut self, max: usize) -> Self {
        self.max_input_chars = max;
        self
    }
}

impl ChatBackend for HttpChatBackend {
    fn model_name(&self) -> &str {
        &self.model
    }

    fn supports_json_schema(&self) -> bool {
        true
    }

    fn max_input_chars(&self) -> usize {
        self.max_input_chars
    }

    fn complete(&self, request: &BackendRequest) -> Result<Value, BackendError> {
        let mut body = json!({
            "model": self.model,
            "messages": [
                {"role": "system", "content": request.system_message},
                {"role": "user", "content": request.user_message},
            ],
            "stream": false,
            "options": {"temperature": 0},
        });
        if let Some(schema) = &request.output_schema {
            body["format"] = schema.clone();
        }
        let url = format!("{}/api/chat", self.base_url);
        let mut resp = self
            .agent
            .post(&url)
            .config()
            .timeout_global(Some(request.timeout))
            .build()
            .send_json(&body)
            .map_err(transport)?;
        let parsed: Value = resp.body_mut().read_json().map_err(transport)?;
        let content = parsed
            .pointer("/message/content")
            .and_then(Value::as_str)
            .ok_or_else(|| transport(format!("response missing message.content: {}", clip(&parsed.to_string()))))?;
        serde_json::from_str(content).map_err(|_| BackendError::MalformedOutput(clip(content)))
    }
}

/// Text embeddings over HTTP. The vector dimension is learned from the
/// first successful call and cached.
pub struct HttpEmbeddingBackend {
    agent: Agent,
    base_url: String,
    model: String,
    timeout: Duration,
    dimension: OnceLock<usize>,
}

impl HttpEmbeddingBackend {
    pub fn new(base_url: &str, model: &str, timeout: Duration) -> Self {
        Self {
            agent: Agent::config_builder().timeout_global(Some(timeout)).build().into(),
            base_url: base_url.trim_end_matches('/').to_string(),
            model: model.to_string(),
            timeout,
            dimension: OnceLock::new(),
        }
    }

    fn embed_raw(&self, text: &str) -> Result<Vec<f32>, BackendError> {
        let body = json!({"model": self.model, "prompt": text});
        let url = format!("{}/api/embeddings", self.base_url);
        let mut resp = self
            .agent
            .post(&url)
            .config()
            .timeout_global(Some(self.timeout))
            .build()
            .send_json(&body)
            .map_err(transport)?;
        let parsed: Value = resp.body_mut().read_json().map_err(transport)?;
        let values = parsed
            .get("embedding")
            .and_then(Value::as_array)
            .ok_or_else(|| transport(format!("response missing embedding array: {}", clip(&parsed.to_string()))))?;
        values
            .iter()
            .map(|v| v.as_f64().map(|f| f as f32).ok_or_else(|| transport("non-numeric embedding component")))
            .collect()
    }
}

impl EmbeddingBackend for HttpEmbeddingBackend {
    fn model_name(&self) -> &str {
        &self.model
    }

    fn dimension(&self) -> usize {
        *self
            .dimension
            .get_or_init(|| self.embed_raw("dimension probe").map(|v| v.len()).unwrap_or(0))
    }

    fn embed(&self, text: &str) -> Result<Vec<f32>, BackendError> {
        if text.trim().is_empty() {
            return Err(BackendError::EmptyInput);
        }
        let vector = self.embed_raw(text)?;
        let _ = self.dimension.set(vector.len());
        Ok(vector)
    }
}
