use std::collections::{BTreeMap, VecDeque};
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::{check_dims, BackendKind, ChatBackend, CompletionRequest, CompletionResult, EmbeddingBackend, LlmError};
use crate::retrieval::EmbeddingVector;

/// On-disk description of a scripted backend.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum ScriptedBackendSpec {
    /// Replies handed out in order, each exactly once.
    Sequence { replies: Vec<String> },
    /// Reply chosen by the request fingerprint (hex).
    Map { entries: BTreeMap<String, String> },
}

impl ScriptedBackendSpec {
    pub fn load(path: &Path) -> Result<Self, LlmError> {
        let raw = std::fs::read_to_string(path).map_err(|e| LlmError::Config(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&raw).map_err(|e| LlmError::Config(format!("{}: {e}", path.display())))
    }

    pub fn save(&self, path: &Path) -> Result<(), LlmError> {
        let json = serde_json::to_string_pretty(self).map_err(|e| LlmError::Config(e.to_string()))?;
        std::fs::write(path, json + "\n").map_err(|e| LlmError::Config(e.to_string()))
    }
}

enum Script {
    Sequence(Mutex<VecDeque<String>>),
    Map(BTreeMap<String, String>),
}

/// Deterministic replay backend. Sequence consumption is serialized, so the
/// order in which concurrent callers receive replies is total.
pub struct ScriptedBackend {
    script: Script,
    calls: AtomicUsize,
}

impl ScriptedBackend {
    pub fn new(spec: ScriptedBackendSpec) -> Self {
        let script = match spec {
            ScriptedBackendSpec::Sequence { replies } => Script::Sequence(Mutex::new(replies.into())),
            ScriptedBackendSpec::Map { entries } => Script::Map(entries),
        };
        Self {
            script,
            calls: AtomicUsize::new(0),
        }
    }

    pub fn sequence<I, S>(replies: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self::new(ScriptedBackendSpec::Sequence {
            replies: replies.into_iter().map(Into::into).collect(),
        })
    }

    pub fn from_file(path: &Path) -> Result<Self, LlmError> {
        Ok(Self::new(ScriptedBackendSpec::load(path)?))
    }

    /// Number of `complete` calls made so far, successful or not.
    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl ChatBackend for ScriptedBackend {
    fn complete(&self, request: &CompletionRequest) -> Result<CompletionResult, LlmError> {
        let started = Instant::now();
        self.calls.fetch_add(1, Ordering::SeqCst);
        request.validate()?;
        let text = match &self.script {
            Script::Sequence(queue) => queue
                .lock()
                .expect("script lock poisoned")
                .pop_front()
                .ok_or(LlmError::ScriptExhausted)?,
            Script::Map(entries) => {
                let fp = request.fingerprint();
                entries.get(&fp.0).cloned().ok_or(LlmError::NoScriptedReply(fp.0))?
            }
        };
        if text.trim().is_empty() {
            return Err(LlmError::MalformedReply("scripted reply is empty".into()));
        }
        Ok(CompletionResult {
            text,
            latency: started.elapsed(),
            backend: BackendKind::Scripted,
            usage: None,
        })
    }
}

/// Embedding backend that hands out pre-set vectors in order.
pub struct ScriptedEmbeddings {
    vectors: Mutex<VecDeque<Vec<f64>>>,
    normalize: bool,
}

impl ScriptedEmbeddings {
    pub fn new(vectors: Vec<Vec<f64>>, normalize: bool) -> Self {
        Self {
            vectors: Mutex::new(vectors.into()),
            normalize,
        }
    }
}

impl EmbeddingBackend for ScriptedEmbeddings {
    fn embed_remote(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, LlmError> {
        let mut queue = self.vectors.lock().expect("script lock poisoned");
        let mut out = Vec::with_capacity(texts.len());
        for _ in texts {
            let values = queue.pop_front().ok_or(LlmError::ScriptExhausted)?;
            out.push(if self.normalize {
                EmbeddingVector::normalized(values)
            } else {
                EmbeddingVector::raw(values)
            });
        }
        check_dims(&out)?;
        Ok(out)
    }
}
