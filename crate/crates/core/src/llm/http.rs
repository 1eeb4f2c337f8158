use std::sync::{Condvar, Mutex};
use std::time::{Duration, Instant};

use rand::Rng;
use serde_json::{json, Value};

use super::{
    check_dims, BackendKind, ChatBackend, CompletionRequest, CompletionResult, EmbeddingBackend, LlmError, TokenUsage,
};
use crate::retrieval::EmbeddingVector;

pub const DEFAULT_RETRY_MAX: u32 = 2;
pub const DEFAULT_BACKOFF_BASE: Duration = Duration::from_millis(250);
pub const DEFAULT_MAX_IN_FLIGHT: usize = 4;
const DEFAULT_TIMEOUT: Duration = Duration::from_secs(120);

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TransportReply {
    pub status: u16,
    pub body: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TransportError {
    Timeout,
    Connect(String),
    Other(String),
}

impl std::fmt::Display for TransportError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            TransportError::Timeout => f.write_str("request timed out"),
            TransportError::Connect(e) => write!(f, "connection failed: {e}"),
            TransportError::Other(e) => f.write_str(e),
        }
    }
}

/// A single JSON POST. Separated out so retry behaviour can be exercised
/// against a fake.
pub trait Transport: Send + Sync {
    fn post_json(
        &self,
        url: &str,
        bearer: Option<&str>,
        body: &Value,
        timeout: Duration,
    ) -> Result<TransportReply, TransportError>;
}

/// Blocking reqwest transport. Must not be called from inside an async
/// runtime thread; wrap calls in `spawn_blocking`.
pub struct ReqwestTransport {
    client: reqwest::blocking::Client,
}

impl ReqwestTransport {
    pub fn new() -> Result<Self, LlmError> {
        let client = reqwest::blocking::Client::builder()
            .build()
            .map_err(|e| LlmError::Config(e.to_string()))?;
        Ok(Self { client })
    }
}

impl Transport for ReqwestTransport {
    fn post_json(
        &self,
        url: &str,
        bearer: Option<&str>,
        body: &Value,
        timeout: Duration,
    ) -> Result<TransportReply, TransportError> {
        let mut req = self.client.post(url).timeout(timeout).json(body);
        if let Some(token) = bearer {
            req = req.bearer_auth(token);
        }
        let resp = req.send().map_err(|e| {
            if e.is_timeout() {
                TransportError::Timeout
            } else if e.is_connect() {
                TransportError::Connect(e.to_string())
            } else {
                TransportError::Other(e.to_string())
            }
        })?;
        let status = resp.status().as_u16();
        let body = resp.text().map_err(|e| {
            if e.is_timeout() {
                TransportError::Timeout
            } else {
                TransportError::Other(e.to_string())
            }
        })?;
        Ok(TransportReply { status, body })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HttpConfig {
    /// Server root; requests go to `{base_url}/v1/...`.
    pub base_url: String,
    pub api_key: Option<String>,
    pub retry_max: u32,
    pub backoff_base: Duration,
    pub timeout: Duration,
    pub max_in_flight: usize,
    /// Model used for `/v1/embeddings`.
    pub embedding_model: String,
    pub normalize_embeddings: bool,
}

impl HttpConfig {
    pub fn new(base_url: impl Into<String>) -> Self {
        Self {
            base_url: base_url.into().trim_end_matches('/').to_string(),
            api_key: None,
            retry_max: DEFAULT_RETRY_MAX,
            backoff_base: DEFAULT_BACKOFF_BASE,
            timeout: DEFAULT_TIMEOUT,
            max_in_flight: DEFAULT_MAX_IN_FLIGHT,
            embedding_model: String::new(),
            normalize_embeddings: true,
        }
    }
}

/// Caps the number of concurrent requests.
struct InFlightGate {
    active: Mutex<usize>,
    freed: Condvar,
    cap: usize,
}

struct GateTicket<'a>(&'a InFlightGate);

impl InFlightGate {
    fn new(cap: usize) -> Self {
        Self {
            active: Mutex::new(0),
            freed: Condvar::new(),
            cap: cap.max(1),
        }
    }

    fn enter(&self) -> GateTicket<'_> {
        let mut active = self.active.lock().expect("gate lock poisoned");
        while *active >= self.cap {
            active = self.freed.wait(active).expect("gate lock poisoned");
        }
        *active += 1;
        GateTicket(self)
    }
}

impl Drop for GateTicket<'_> {
    fn drop(&mut self) {
        let mut active = self.0.active.lock().expect("gate lock poisoned");
        *active -= 1;
        self.0.freed.notify_one();
    }
}

/// OpenAI-compatible HTTP backend.
///
/// Timeouts, connection failures, 429 and 5xx are retried up to `retry_max`
/// times with exponential backoff (`backoff_base * 2^attempt` plus up to one
/// `backoff_base` of jitter). Other 4xx replies fail immediately.
pub struct HttpBackend<T: Transport = ReqwestTransport> {
    config: HttpConfig,
    transport: T,
    gate: InFlightGate,
}

impl HttpBackend<ReqwestTransport> {
    pub fn connect(config: HttpConfig) -> Result<Self, LlmError> {
        Ok(Self::with_transport(config, ReqwestTransport::new()?))
    }
}

impl<T: Transport> HttpBackend<T> {
    pub fn with_transport(config: HttpConfig, transport: T) -> Self {
        let gate = InFlightGate::new(config.max_in_flight);
        Self {
            config,
            transport,
            gate,
        }
    }

    pub fn config(&self) -> &HttpConfig {
        &self.config
    }

    pub fn transport(&self) -> &T {
        &self.transport
    }

    fn backoff(&self, attempt: u32) -> Duration {
        let base = self.config.backoff_base;
        let jitter = if base.is_zero() {
            Duration::ZERO
        } else {
            base.mul_f64(rand::rng().random::<f64>())
        };
        base.saturating_mul(1u32 << attempt.min(16)) + jitter
    }

    fn post_with_retry(&self, path: &str, body: &Value) -> Result<String, LlmError> {
        let _ticket = self.gate.enter();
        let url = format!("{}{}", self.config.base_url, path);
        let attempts = self.config.retry_max + 1;
        let mut last_error = String::new();
        for attempt in 0..attempts {
            if attempt > 0 {
                std::thread::sleep(self.backoff(attempt - 1));
            }
            match self
                .transport
                .post_json(&url, self.config.api_key.as_deref(), body, self.config.timeout)
            {
                Ok(reply) if (200..300).contains(&reply.status) => return Ok(reply.body),
                Ok(reply) if reply.status == 429 || reply.status >= 500 => {
                    last_error = format!("status {}: {}", reply.status, truncate(&reply.body));
                }
                Ok(reply) => {
                    return Err(LlmError::Rejected {
                        status: reply.status,
                        body: truncate(&reply.body),
                    })
                }
                Err(e) => last_error = e.to_string(),
            }
        }
        Err(LlmError::BackendUnavailable { attempts, last_error })
    }
}

fn truncate(s: &str) -> String {
    s.chars().take(300).collect()
}

fn parse_completion(body: &str) -> Result<(String, Option<TokenUsage>), LlmError> {
    let value: Value = serde_json::from_str(body).map_err(|e| LlmError::MalformedReply(e.to_string()))?;
    let text = value
        .pointer("/choices/0/message/content")
        .and_then(Value::as_str)
        .ok_or_else(|| LlmError::MalformedReply("missing choices[0].message.content".into()))?;
    if text.trim().is_empty() {
        return Err(LlmError::MalformedReply("empty assistant content".into()));
    }
    let usage = value.get("usage").and_then(|u| {
        Some(TokenUsage {
            prompt_tokens: u.get("prompt_tokens")?.as_u64()?,
            completion_tokens: u.get("completion_tokens")?.as_u64()?,
            total_tokens: u.get("total_tokens")?.as_u64()?,
        })
    });
    Ok((text.to_string(), usage))
}

impl<T: Transport> ChatBackend for HttpBackend<T> {
    fn complete(&self, request: &CompletionRequest) -> Result<CompletionResult, LlmError> {
        request.validate()?;
        let started = Instant::now();
        let body = json!({
            "model": request.model_id,
            "messages": request.messages,
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
        });
        let reply = self.post_with_retry("/v1/chat/completions", &body)?;
        let (text, usage) = parse_completion(&reply)?;
        Ok(CompletionResult {
            text,
            latency: started.elapsed(),
            backend: BackendKind::Http,
            usage,
        })
    }
}

impl<T: Transport> EmbeddingBackend for HttpBackend<T> {
    fn embed_remote(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, LlmError> {
        if texts.is_empty() {
            return Ok(Vec::new());
        }
        let body = json!({ "model": self.config.embedding_model, "input": texts });
        let reply = self.post_with_retry("/v1/embeddings", &body)?;
        let value: Value = serde_json::from_str(&reply).map_err(|e| LlmError::MalformedReply(e.to_string()))?;
        let data = value
            .get("data")
            .and_then(Value::as_array)
            .ok_or_else(|| LlmError::MalformedReply("missing data array".into()))?;
        if data.len() != texts.len() {
            return Err(LlmError::MalformedReply(format!(
                "expected {} embeddings, got {}",
                texts.len(),
                data.len()
            )));
        }
        let mut indexed = Vec::with_capacity(data.len());
        for (pos, item) in data.iter().enumerate() {
            let index = item.get("index").and_then(Value::as_u64).map_or(pos, |i| i as usize);
            let values: Vec<f64> = item
                .get("embedding")
                .and_then(Value::as_array)
                .ok_or_else(|| LlmError::MalformedReply("missing embedding".into()))?
                .iter()
                .map(|x| {
                    x.as_f64()
                        .ok_or_else(|| LlmError::MalformedReply("non-numeric embedding".into()))
                })
                .collect::<Result<_, _>>()?;
            indexed.push((index, values));
        }
        indexed.sort_by_key(|(i, _)| *i);
        let out: Vec<EmbeddingVector> = indexed
            .into_iter()
            .map(|(_, v)| {
                if self.config.normalize_embeddings {
                    EmbeddingVector::normalized(v)
                } else {
                    EmbeddingVector::raw(v)
                }
            })
            .collect();
        check_dims(&out)?;
        Ok(out)
    }
}
