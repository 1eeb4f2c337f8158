//! Chat-completion and embedding backends.
//!
//! Two implementations sit behind the [`ChatBackend`] / [`EmbeddingBackend`]
//! traits: [`HttpBackend`], which speaks the OpenAI-compatible wire format to
//! any local or remote server, and [`ScriptedBackend`], which replays canned
//! replies for tests and transcript fixtures.

mod http;
mod scripted;

use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::retrieval::{Embedder, EmbeddingVector, RetrievalError};

pub use http::{
    HttpBackend, HttpConfig, ReqwestTransport, Transport, TransportError, TransportReply, DEFAULT_BACKOFF_BASE,
    DEFAULT_MAX_IN_FLIGHT, DEFAULT_RETRY_MAX,
};
pub use scripted::{ScriptedBackend, ScriptedBackendSpec, ScriptedEmbeddings};

pub const DEFAULT_TEMPERATURE: f64 = 0.0;
pub const DEFAULT_MAX_TOKENS: u32 = 512;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LlmError {
    #[error("backend unavailable after {attempts} attempt(s): {last_error}")]
    BackendUnavailable { attempts: u32, last_error: String },
    #[error("malformed reply: {0}")]
    MalformedReply(String),
    #[error("scripted backend has no replies left")]
    ScriptExhausted,
    #[error("scripted backend has no reply for fingerprint {0}")]
    NoScriptedReply(String),
    #[error("request rejected with status {status}: {body}")]
    Rejected { status: u16, body: String },
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("embedding dims disagree: expected {expected}, got {got}")]
    DimInconsistent { expected: usize, got: usize },
    #[error("backend configuration: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::System => "system",
            Role::User => "user",
            Role::Assistant => "assistant",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        Self {
            role: Role::System,
            content: content.into(),
        }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self {
            role: Role::User,
            content: content.into(),
        }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Self {
            role: Role::Assistant,
            content: content.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionRequest {
    pub messages: Vec<ChatMessage>,
    pub model_id: String,
    pub temperature: f64,
    pub max_tokens: u32,
    /// Free text carried into logs; not sent on the wire or fingerprinted.
    pub request_tag: String,
}

impl CompletionRequest {
    pub fn new(messages: Vec<ChatMessage>, model_id: impl Into<String>) -> Self {
        Self {
            messages,
            model_id: model_id.into(),
            temperature: DEFAULT_TEMPERATURE,
            max_tokens: DEFAULT_MAX_TOKENS,
            request_tag: String::new(),
        }
    }

    pub fn with_tag(mut self, tag: impl Into<String>) -> Self {
        self.request_tag = tag.into();
        self
    }

    /// First message must be `system`, last must be `user`, and user or
    /// assistant content may not be empty.
    pub fn validate(&self) -> Result<(), LlmError> {
        let invalid = |m: &str| Err(LlmError::InvalidRequest(m.to_string()));
        match (self.messages.first(), self.messages.last()) {
            (Some(first), Some(last)) => {
                if first.role != Role::System {
                    return invalid("first message must have role system");
                }
                if last.role != Role::User {
                    return invalid("last message must have role user");
                }
            }
            _ => return invalid("no messages"),
        }
        if self
            .messages
            .iter()
            .any(|m| m.role != Role::System && m.content.trim().is_empty())
        {
            return invalid("user/assistant content must be non-empty");
        }
        if self.temperature.is_nan() || self.temperature < 0.0 {
            return invalid("temperature must be >= 0");
        }
        if self.max_tokens == 0 {
            return invalid("max_tokens must be positive");
        }
        Ok(())
    }

    pub fn fingerprint(&self) -> Fingerprint {
        fingerprint(&self.messages)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Http,
    Scripted,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenUsage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub total_tokens: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionResult {
    pub text: String,
    #[serde(with = "duration_ms")]
    pub latency: Duration,
    pub backend: BackendKind,
    pub usage: Option<TokenUsage>,
}

mod duration_ms {
    use std::time::Duration;

    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u64(d.as_millis() as u64)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        Ok(Duration::from_millis(u64::deserialize(d)?))
    }
}

/// Stable 128-bit hash of a message sequence, hex encoded.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Fingerprint(pub String);

impl std::fmt::Display for Fingerprint {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

/// Hash role and content of every message in order. Each content is length
/// prefixed so that moving text across a message boundary changes the hash.
pub fn fingerprint(messages: &[ChatMessage]) -> Fingerprint {
    let mut hasher = Sha256::new();
    for m in messages {
        hasher.update(m.role.as_str().as_bytes());
        hasher.update([0u8]);
        hasher.update((m.content.len() as u64).to_le_bytes());
        hasher.update(m.content.as_bytes());
    }
    Fingerprint(hex::encode(&hasher.finalize()[..16]))
}

pub trait ChatBackend: Send + Sync {
    fn complete(&self, request: &CompletionRequest) -> Result<CompletionResult, LlmError>;
}

impl<B: ChatBackend + ?Sized> ChatBackend for Arc<B> {
    fn complete(&self, request: &CompletionRequest) -> Result<CompletionResult, LlmError> {
        (**self).complete(request)
    }
}

pub trait EmbeddingBackend: Send + Sync {
    fn embed_remote(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, LlmError>;
}

/// Check that every vector has the same dimension as the first.
pub fn check_dims(vectors: &[EmbeddingVector]) -> Result<(), LlmError> {
    if let Some(first) = vectors.first() {
        if let Some(bad) = vectors.iter().find(|v| v.dim != first.dim) {
            return Err(LlmError::DimInconsistent {
                expected: first.dim,
                got: bad.dim,
            });
        }
    }
    Ok(())
}

/// Lets a remote embeddings endpoint stand in for TF-IDF as an index embedder.
pub struct RemoteEmbedder {
    backend: Arc<dyn EmbeddingBackend>,
    tag: String,
}

impl RemoteEmbedder {
    pub fn new(backend: Arc<dyn EmbeddingBackend>, model_id: &str) -> Self {
        Self {
            backend,
            tag: format!("remote:{model_id}"),
        }
    }
}

impl Embedder for RemoteEmbedder {
    fn tag(&self) -> String {
        self.tag.clone()
    }

    fn embed(&self, text: &str) -> Result<EmbeddingVector, RetrievalError> {
        let mut out = self
            .backend
            .embed_remote(&[text.to_string()])
            .map_err(|e| RetrievalError::Embed(e.to_string()))?;
        if out.len() != 1 {
            return Err(RetrievalError::Embed(format!("expected 1 vector, got {}", out.len())));
        }
        Ok(out.remove(0))
    }
}
