//! Therapist/Supervisor protocol.
//!
//! A turn retrieves context for the patient query, asks the Therapist for a
//! draft, asks the Supervisor to check that draft against the same context,
//! and routes either the draft or the Supervisor's replacement to the patient.
//! Every turn is written to a [`TurnSink`] before the caller sees it,
//! including turns that fail.

mod log;
mod prompt;
mod replay;
mod verdict;

use std::collections::HashMap;
use std::sync::{Arc, Mutex, RwLock};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::llm::{ChatBackend, ChatMessage, CompletionRequest, LlmError, DEFAULT_MAX_TOKENS};
use crate::retrieval::{RetrievalError, RetrievalHit, Retriever, DEFAULT_MIN_SCORE};

pub use log::{read_turn_log, JsonlTurnLog, MemoryTurnLog, TurnSink, FAILPOINT_ABORT_AFTER_PERSIST, FAILPOINT_ENV};
pub use prompt::{
    build_supervisor_prompt, build_therapist_prompt, hit_header, render_context, PromptTemplates, NO_SESSION_TAG,
};
pub use replay::{load_transcripts, replay_script, Transcript};
pub use verdict::{parse_supervisor_output, ParseMode, SupervisorVerdict, VerdictKind};

pub const TURN_SCHEMA_VERSION: u32 = 1;
pub const DEFAULT_K: usize = 4;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AgentError {
    #[error("prompt template: {0}")]
    Template(String),
    #[error("therapist draft is empty")]
    EmptyDraft,
    #[error("unparseable supervisor verdict: {0}")]
    UnparseableVerdict(String),
    #[error("supervisor did not provide a replacement response")]
    MissingReplacement,
    #[error("query is empty")]
    EmptyQuery { turn: Box<AgentTurn> },
    #[error("language model backend failed: {source}")]
    BackendUnavailable { turn: Box<AgentTurn>, source: LlmError },
    #[error("retrieval failed: {source}")]
    Retrieval {
        turn: Box<AgentTurn>,
        source: RetrievalError,
    },
    #[error("turn log: {0}")]
    Log(String),
    #[error("script: {0}")]
    Script(String),
}

impl AgentError {
    /// The logged turn, for errors raised after the turn was persisted.
    pub fn turn(&self) -> Option<&AgentTurn> {
        match self {
            AgentError::EmptyQuery { turn }
            | AgentError::BackendUnavailable { turn, .. }
            | AgentError::Retrieval { turn, .. } => Some(turn),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TurnStatus {
    /// Supervisor verdict parsed and routed.
    Completed,
    /// Fallback reply sent without an error: no context, or verdict unusable.
    Degraded,
    /// Fallback reply sent because a stage errored.
    Failed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageTimestamps {
    pub started: DateTime<Utc>,
    pub retrieved: Option<DateTime<Utc>>,
    pub therapist_done: Option<DateTime<Utc>>,
    pub supervisor_done: Option<DateTime<Utc>>,
    pub finished: DateTime<Utc>,
}

/// Full record of one patient query and what was done with it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentTurn {
    pub schema_version: u32,
    pub turn_id: String,
    pub session_id: String,
    pub query: String,
    pub session_tag: Option<String>,
    pub model_id: String,
    pub hits: Vec<RetrievalHit>,
    pub therapist_messages: Vec<ChatMessage>,
    pub therapist_draft: String,
    pub supervisor_messages: Vec<ChatMessage>,
    pub supervisor_raw: String,
    pub verdict: Option<SupervisorVerdict>,
    pub final_response: String,
    pub status: TurnStatus,
    pub degraded: bool,
    /// Why the fallback reply was used, when it was.
    pub degraded_reason: Option<String>,
    pub timestamps: StageTimestamps,
}

impl AgentTurn {
    fn start(turn_id: String, session_id: &str, query: &str, session_tag: Option<&str>, model_id: &str) -> Self {
        let now = Utc::now();
        Self {
            schema_version: TURN_SCHEMA_VERSION,
            turn_id,
            session_id: session_id.to_string(),
            query: query.to_string(),
            session_tag: session_tag.map(str::to_string),
            model_id: model_id.to_string(),
            hits: Vec::new(),
            therapist_messages: Vec::new(),
            therapist_draft: String::new(),
            supervisor_messages: Vec::new(),
            supervisor_raw: String::new(),
            verdict: None,
            final_response: String::new(),
            status: TurnStatus::Completed,
            degraded: false,
            degraded_reason: None,
            timestamps: StageTimestamps {
                started: now,
                retrieved: None,
                therapist_done: None,
                supervisor_done: None,
                finished: now,
            },
        }
    }

    fn fall_back(&mut self, status: TurnStatus, reason: String, fallback: &str) {
        self.status = status;
        self.degraded = true;
        self.degraded_reason = Some(reason);
        self.final_response = fallback.to_string();
    }

    /// Check the routing rules between verdict, draft and final response.
    pub fn check_routing(&self) -> Result<(), String> {
        if self.degraded {
            return match self.verdict {
                None => Ok(()),
                Some(_) => Err("degraded turn carries a verdict".into()),
            };
        }
        let verdict = self.verdict.as_ref().ok_or("completed turn has no verdict")?;
        if self.therapist_draft.is_empty() || self.supervisor_raw.is_empty() {
            return Err("completed turn is missing the draft or the supervisor reply".into());
        }
        match verdict.kind {
            VerdictKind::Approved if self.final_response == self.therapist_draft => Ok(()),
            VerdictKind::Revised | VerdictKind::Rejected
                if verdict.replacement.as_deref() == Some(self.final_response.as_str()) =>
            {
                Ok(())
            }
            kind => Err(format!("final response does not follow a {kind:?} verdict")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AgentConfig {
    pub k: usize,
    pub min_score: f64,
    pub model_id: String,
    pub temperature: f64,
    pub max_tokens: u32,
    /// Restrict retrieval to chunks whose `session` metadata matches the
    /// turn's session tag. Off by default: all sessions share one context.
    pub segment_by_session: bool,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            k: DEFAULT_K,
            min_score: DEFAULT_MIN_SCORE,
            model_id: "local".into(),
            temperature: 0.0,
            max_tokens: DEFAULT_MAX_TOKENS,
            segment_by_session: false,
        }
    }
}

/// Everything one turn needs.
pub struct TurnContext<'a> {
    pub retriever: &'a Retriever,
    pub backend: &'a dyn ChatBackend,
    pub templates: &'a PromptTemplates,
    pub config: &'a AgentConfig,
    pub sink: &'a dyn TurnSink,
}

impl TurnContext<'_> {
    fn request(&self, messages: Vec<ChatMessage>, tag: String) -> CompletionRequest {
        let mut req = CompletionRequest::new(messages, self.config.model_id.clone()).with_tag(tag);
        req.temperature = self.config.temperature;
        req.max_tokens = self.config.max_tokens;
        req
    }

    fn persist(&self, turn: &mut AgentTurn) -> Result<(), AgentError> {
        turn.timestamps.finished = Utc::now();
        self.sink.append(turn)
    }
}

/// Run one turn: retrieve, draft, verify, route, persist.
///
/// At most one Therapist call and one Supervisor call are made. Whatever
/// happens, the turn is persisted before this returns (a persistence failure
/// itself is reported as [`AgentError::Log`]). The Therapist draft is never
/// returned unless the Supervisor approved it.
pub fn answer_query(
    ctx: &TurnContext<'_>,
    session_id: &str,
    turn_id: String,
    query: &str,
    session_tag: Option<&str>,
) -> Result<AgentTurn, AgentError> {
    let fallback = ctx.templates.fallback_reply.as_str();
    let mut turn = AgentTurn::start(turn_id, session_id, query, session_tag, &ctx.config.model_id);

    if query.trim().is_empty() {
        turn.fall_back(TurnStatus::Failed, "empty query".into(), fallback);
        ctx.persist(&mut turn)?;
        return Err(AgentError::EmptyQuery { turn: Box::new(turn) });
    }

    let filter = session_tag.filter(|_| ctx.config.segment_by_session);
    let hits = match ctx
        .retriever
        .search_session(query, ctx.config.k, ctx.config.min_score, filter)
    {
        Ok(hits) => hits,
        Err(source) => {
            turn.fall_back(TurnStatus::Failed, format!("retrieval: {source}"), fallback);
            ctx.persist(&mut turn)?;
            return Err(AgentError::Retrieval {
                turn: Box::new(turn),
                source,
            });
        }
    };
    turn.timestamps.retrieved = Some(Utc::now());
    turn.hits = hits;

    if turn.hits.is_empty() {
        turn.fall_back(TurnStatus::Degraded, "no context above min_score".into(), fallback);
        ctx.persist(&mut turn)?;
        return Ok(turn);
    }

    // Therapist
    let messages = match build_therapist_prompt(query, &turn.hits, ctx.templates, session_tag) {
        Ok(m) => m,
        Err(e) => {
            turn.fall_back(TurnStatus::Failed, e.to_string(), fallback);
            ctx.persist(&mut turn)?;
            return Err(e);
        }
    };
    turn.therapist_messages = messages.clone();
    let draft = ctx
        .backend
        .complete(&ctx.request(messages, format!("{}/therapist", turn.turn_id)))
        .and_then(|r| non_empty(r.text));
    turn.timestamps.therapist_done = Some(Utc::now());
    match draft {
        Ok(text) => turn.therapist_draft = text,
        Err(source) => {
            turn.fall_back(TurnStatus::Failed, format!("therapist: {source}"), fallback);
            ctx.persist(&mut turn)?;
            return Err(AgentError::BackendUnavailable {
                turn: Box::new(turn),
                source,
            });
        }
    }

    // Supervisor
    let messages = build_supervisor_prompt(query, &turn.therapist_draft, &turn.hits, ctx.templates)
        .inspect_err(|e| turn.fall_back(TurnStatus::Failed, e.to_string(), fallback));
    let messages = match messages {
        Ok(m) => m,
        Err(e) => {
            ctx.persist(&mut turn)?;
            return Err(e);
        }
    };
    turn.supervisor_messages = messages.clone();
    let raw = ctx
        .backend
        .complete(&ctx.request(messages, format!("{}/supervisor", turn.turn_id)))
        .and_then(|r| non_empty(r.text));
    turn.timestamps.supervisor_done = Some(Utc::now());
    match raw {
        Ok(text) => turn.supervisor_raw = text,
        Err(source) => {
            turn.fall_back(TurnStatus::Failed, format!("supervisor: {source}"), fallback);
            ctx.persist(&mut turn)?;
            return Err(AgentError::BackendUnavailable {
                turn: Box::new(turn),
                source,
            });
        }
    }

    match parse_supervisor_output(&turn.supervisor_raw) {
        Ok(verdict) => {
            turn.final_response = match verdict.kind {
                VerdictKind::Approved => turn.therapist_draft.clone(),
                _ => verdict.replacement.clone().unwrap_or_default(),
            };
            turn.verdict = Some(verdict);
        }
        Err(e) => turn.fall_back(TurnStatus::Degraded, e.to_string(), fallback),
    }
    ctx.persist(&mut turn)?;
    Ok(turn)
}

fn non_empty(text: String) -> Result<String, LlmError> {
    if text.trim().is_empty() {
        Err(LlmError::MalformedReply("empty reply".into()))
    } else {
        Ok(text)
    }
}

/// Long-lived agent: owns the retriever, backend, templates and log, numbers
/// turns per session, and runs turns of one session strictly in order.
pub struct Coach {
    retriever: RwLock<Arc<Retriever>>,
    backend: Arc<dyn ChatBackend>,
    templates: PromptTemplates,
    config: AgentConfig,
    sink: Arc<dyn TurnSink>,
    sessions: Mutex<HashMap<String, Arc<Mutex<u64>>>>,
}

impl Coach {
    pub fn new(
        retriever: Retriever,
        backend: Arc<dyn ChatBackend>,
        templates: PromptTemplates,
        config: AgentConfig,
        sink: Arc<dyn TurnSink>,
    ) -> Result<Self, AgentError> {
        templates.validate()?;
        Ok(Self {
            retriever: RwLock::new(Arc::new(retriever)),
            backend,
            templates,
            config,
            sink,
            sessions: Mutex::new(HashMap::new()),
        })
    }

    pub fn config(&self) -> &AgentConfig {
        &self.config
    }

    pub fn templates(&self) -> &PromptTemplates {
        &self.templates
    }

    pub fn retriever(&self) -> Arc<Retriever> {
        self.retriever.read().expect("retriever lock poisoned").clone()
    }

    /// Swap in a rebuilt index. Turns already running keep the old one.
    pub fn replace_retriever(&self, retriever: Retriever) {
        *self.retriever.write().expect("retriever lock poisoned") = Arc::new(retriever);
    }

    /// Continue numbering after turns already in a log.
    pub fn resume_numbering<'a>(&self, turns: impl IntoIterator<Item = &'a AgentTurn>) {
        let mut sessions = self.sessions.lock().expect("session lock poisoned");
        for turn in turns {
            let n = turn
                .turn_id
                .rsplit_once(':')
                .and_then(|(_, n)| n.parse::<u64>().ok())
                .unwrap_or(0);
            let counter = sessions.entry(turn.session_id.clone()).or_default();
            let mut c = counter.lock().expect("session lock poisoned");
            *c = (*c).max(n);
        }
    }

    fn session_slot(&self, session_id: &str) -> Arc<Mutex<u64>> {
        self.sessions
            .lock()
            .expect("session lock poisoned")
            .entry(session_id.to_string())
            .or_default()
            .clone()
    }

    /// Answer a patient query in `session_id`. Turn ids are `{session}:{n}`
    /// with `n` counting from 1.
    pub fn answer(&self, session_id: &str, query: &str, session_tag: Option<&str>) -> Result<AgentTurn, AgentError> {
        let slot = self.session_slot(session_id);
        let mut counter = slot.lock().expect("session lock poisoned");
        *counter += 1;
        let turn_id = format!("{session_id}:{}", *counter);
        let retriever = self.retriever();
        let ctx = TurnContext {
            retriever: &retriever,
            backend: self.backend.as_ref(),
            templates: &self.templates,
            config: &self.config,
            sink: self.sink.as_ref(),
        };
        answer_query(&ctx, session_id, turn_id, query, session_tag)
    }
}
