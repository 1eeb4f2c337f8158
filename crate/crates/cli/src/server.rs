//! HTTP service. Three audiences share one API: patients (session
//! messages, final responses only), supervisors (full turn traces) and
//! raters (blinded items and rating submission).
//!
//! The trace endpoint has no access control here; deployments must put an
//! authenticating proxy in front of it.

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::net::SocketAddr;
use std::sync::{Arc, Mutex};

use axum::extract::rejection::{JsonRejection, QueryRejection};
use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use chrono::{DateTime, Utc};
use coached_core::agent::{read_turn_log, AgentError, AgentTurn, Coach, JsonlTurnLog};
use coached_core::ingest::{
    chunk_document, normalize_document, read_documents_jsonl, DocumentFormat, Metadata, SourceDocument,
};
use coached_eval::{EvalError, TTestVariant};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::config::AppConfig;
use crate::eval_desk::{EvalDesk, RatingSubmission};
use crate::pipeline::{
    build_and_save_index, build_backend, ensure_parent, load_retriever, load_templates, write_corpus,
};
use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionRecord {
    pub session_id: String,
    pub created_at: DateTime<Utc>,
    #[serde(default)]
    pub session_tag: Option<String>,
    #[serde(default)]
    pub turn_count: usize,
    #[serde(default)]
    pub degraded_count: usize,
}

/// Body of a patient-facing reply. Nothing else from the turn is exposed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatientReply {
    pub session_id: String,
    pub turn_id: String,
    pub final_response: String,
    pub degraded: bool,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NewSession {
    #[serde(default)]
    pub session_tag: Option<String>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MessageRequest {
    pub query: String,
    #[serde(default)]
    pub session_tag: Option<String>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IngestDocument {
    #[serde(default)]
    pub doc_id: Option<String>,
    #[serde(default)]
    pub title: Option<String>,
    pub body: String,
    #[serde(default = "default_format")]
    pub format: DocumentFormat,
    #[serde(default)]
    pub metadata: Metadata,
}

fn default_format() -> DocumentFormat {
    DocumentFormat::Markdown
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IngestRequest {
    pub documents: Vec<IngestDocument>,
}

#[derive(Debug, Deserialize)]
pub struct SearchParams {
    pub q: Option<String>,
    pub k: Option<usize>,
}

#[derive(Debug, Deserialize)]
pub struct RaterParams {
    pub rater: Option<String>,
}

#[derive(Debug, Deserialize)]
pub struct ReportParams {
    pub t_test: Option<TTestVariant>,
}

pub struct Service {
    coach: Coach,
    config: AppConfig,
    sessions: Mutex<BTreeMap<String, SessionRecord>>,
    sessions_log: Mutex<File>,
    eval: Option<EvalDesk>,
    ingest_lock: Mutex<()>,
}

impl Service {
    /// Load everything the service needs. Call outside any async runtime.
    pub fn open(config: AppConfig) -> Result<Self, CliError> {
        let backend = build_backend(&config)?;
        let retriever = load_retriever(&config)?;
        let templates = load_templates(&config)?;
        let previous = read_turn_log(&config.logs.turns)?;
        let sink = Arc::new(JsonlTurnLog::open(&config.logs.turns)?);
        let coach = Coach::new(retriever, backend, templates, config.agent_config(), sink)?;
        coach.resume_numbering(&previous);

        let mut sessions = read_sessions(&config.logs.sessions)?;
        for turn in &previous {
            let rec = sessions
                .entry(turn.session_id.clone())
                .or_insert_with(|| SessionRecord {
                    session_id: turn.session_id.clone(),
                    created_at: turn.timestamps.started,
                    session_tag: turn.session_tag.clone(),
                    turn_count: 0,
                    degraded_count: 0,
                });
            rec.turn_count += 1;
            rec.degraded_count += usize::from(turn.degraded);
        }
        ensure_parent(&config.logs.sessions)?;
        let sessions_log = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&config.logs.sessions)
            .map_err(|e| CliError::Io(format!("{}: {e}", config.logs.sessions.display())))?;
        let eval = if config.eval.trials.exists() {
            Some(EvalDesk::open(&config)?)
        } else {
            None
        };
        Ok(Self {
            coach,
            config,
            sessions: Mutex::new(sessions),
            sessions_log: Mutex::new(sessions_log),
            eval,
            ingest_lock: Mutex::new(()),
        })
    }

    pub fn coach(&self) -> &Coach {
        &self.coach
    }

    pub fn session(&self, id: &str) -> Option<SessionRecord> {
        self.sessions.lock().expect("session lock poisoned").get(id).cloned()
    }

    pub fn create_session(&self, tag: Option<String>) -> Result<SessionRecord, CliError> {
        let rec = SessionRecord {
            session_id: uuid::Uuid::new_v4().simple().to_string(),
            created_at: Utc::now(),
            session_tag: tag,
            turn_count: 0,
            degraded_count: 0,
        };
        let mut line = serde_json::to_vec(&rec).map_err(|e| CliError::Io(e.to_string()))?;
        line.push(b'\n');
        {
            let mut f = self.sessions_log.lock().expect("session log lock poisoned");
            f.write_all(&line).map_err(|e| CliError::Io(e.to_string()))?;
            f.sync_data().map_err(|e| CliError::Io(e.to_string()))?;
        }
        self.sessions
            .lock()
            .expect("session lock poisoned")
            .insert(rec.session_id.clone(), rec.clone());
        Ok(rec)
    }

    fn count_turn(&self, turn: &AgentTurn) {
        if let Some(rec) = self
            .sessions
            .lock()
            .expect("session lock poisoned")
            .get_mut(&turn.session_id)
        {
            rec.turn_count += 1;
            rec.degraded_count += usize::from(turn.degraded);
        }
    }

    /// Run one turn. The turn is already in the log when this returns.
    pub fn answer(&self, session_id: &str, req: &MessageRequest) -> Result<AgentTurn, AgentError> {
        let tag = req
            .session_tag
            .clone()
            .or_else(|| self.session(session_id).and_then(|s| s.session_tag));
        let result = self.coach.answer(session_id, &req.query, tag.as_deref());
        match &result {
            Ok(turn) => self.count_turn(turn),
            Err(e) => {
                if let Some(turn) = e.turn() {
                    self.count_turn(turn);
                }
            }
        }
        result
    }

    pub fn trace(&self, session_id: &str) -> Result<Vec<AgentTurn>, CliError> {
        Ok(read_turn_log(&self.config.logs.turns)?
            .into_iter()
            .filter(|t| t.session_id == session_id)
            .collect())
    }

    /// Add or replace documents, re-chunk the corpus, rebuild the index and
    /// swap it in. Turns already running finish on the old index.
    pub fn ingest(&self, req: IngestRequest) -> Result<Value, CliError> {
        if req.documents.is_empty() {
            return Err(CliError::Input("no documents given".into()));
        }
        let _guard = self.ingest_lock.lock().expect("ingest lock poisoned");
        let mut incoming = Vec::new();
        for (i, d) in req.documents.into_iter().enumerate() {
            let mut prov = d.metadata;
            if let Some(id) = d.doc_id {
                prov.insert("doc_id".into(), id.into());
            }
            if let Some(title) = d.title {
                prov.insert("title".into(), title.into());
            }
            let doc = normalize_document(&d.body, d.format, prov)
                .map_err(|e| CliError::Input(format!("document {i}: {e}")))?;
            incoming.push(doc);
        }
        let mut docs: Vec<SourceDocument> = if self.config.corpus.documents.exists() {
            let f = File::open(&self.config.corpus.documents).map_err(|e| CliError::Io(e.to_string()))?;
            read_documents_jsonl(BufReader::new(f)).map_err(|e| CliError::Io(e.to_string()))?
        } else {
            Vec::new()
        };
        let added = incoming.len();
        for doc in incoming {
            match docs.iter_mut().find(|d| d.doc_id == doc.doc_id) {
                Some(slot) => *slot = doc,
                None => docs.push(doc),
            }
        }
        let mut chunks = Vec::new();
        for doc in &docs {
            chunks.extend(
                chunk_document(doc, &self.config.chunking)
                    .map_err(|e| CliError::Input(format!("{}: {e}", doc.doc_id)))?,
            );
        }
        write_corpus(&self.config, &docs, &chunks)?;
        let (retriever, summary) = build_and_save_index(&self.config, &chunks)?;
        self.coach.replace_retriever(retriever);
        Ok(json!({
            "documents_added": added,
            "documents": docs.len(),
            "chunks": chunks.len(),
            "index": summary,
        }))
    }

    fn eval(&self) -> Result<&EvalDesk, CliError> {
        self.eval
            .as_ref()
            .ok_or_else(|| CliError::NotFound(format!("no trial bank at {}", self.config.eval.trials.display())))
    }
}

fn read_sessions(path: &std::path::Path) -> Result<BTreeMap<String, SessionRecord>, CliError> {
    let mut out = BTreeMap::new();
    let Ok(f) = File::open(path) else { return Ok(out) };
    for line in BufReader::new(f).lines() {
        let line = line.map_err(|e| CliError::Io(e.to_string()))?;
        // a torn last line from a crash is skipped
        if let Ok(mut rec) = serde_json::from_str::<SessionRecord>(&line) {
            rec.turn_count = 0;
            rec.degraded_count = 0;
            out.insert(rec.session_id.clone(), rec);
        }
    }
    Ok(out)
}

struct ApiError(StatusCode, String);

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(json!({ "error": self.1 }))).into_response()
    }
}

impl From<CliError> for ApiError {
    fn from(e: CliError) -> Self {
        let status = match &e {
            CliError::Input(_) => StatusCode::BAD_REQUEST,
            CliError::NotFound(_) => StatusCode::NOT_FOUND,
            CliError::Llm(_) => StatusCode::SERVICE_UNAVAILABLE,
            CliError::Eval(ev) => match ev {
                EvalError::BadScore(_) | EvalError::BadPosition(_) | EvalError::Validation { .. } => {
                    StatusCode::BAD_REQUEST
                }
                EvalError::DuplicateRating { .. } => StatusCode::CONFLICT,
                EvalError::WrongRater { .. } => StatusCode::FORBIDDEN,
                EvalError::UnknownTrial(_) => StatusCode::NOT_FOUND,
                _ => StatusCode::INTERNAL_SERVER_ERROR,
            },
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        ApiError(status, e.to_string())
    }
}

fn bad_request(msg: impl Into<String>) -> ApiError {
    ApiError(StatusCode::BAD_REQUEST, msg.into())
}

type ApiResult = Result<Response, ApiError>;

async fn blocking<T, F>(f: F) -> Result<T, ApiError>
where
    F: FnOnce() -> Result<T, ApiError> + Send + 'static,
    T: Send + 'static,
{
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?
}

async fn create_session(State(s): State<Arc<Service>>, body: Option<Json<NewSession>>) -> ApiResult {
    let tag = body.and_then(|Json(b)| b.session_tag);
    let rec = blocking(move || s.create_session(tag).map_err(ApiError::from)).await?;
    Ok((
        StatusCode::CREATED,
        Json(json!({ "session_id": rec.session_id, "created_at": rec.created_at })),
    )
        .into_response())
}

async fn post_message(
    State(s): State<Arc<Service>>,
    Path(id): Path<String>,
    body: Result<Json<MessageRequest>, JsonRejection>,
) -> ApiResult {
    let Json(req) = body.map_err(|e| bad_request(e.body_text()))?;
    if s.session(&id).is_none() {
        return Err(ApiError(StatusCode::NOT_FOUND, format!("unknown session {id:?}")));
    }
    blocking(move || {
        let reply = |turn: &AgentTurn| PatientReply {
            session_id: turn.session_id.clone(),
            turn_id: turn.turn_id.clone(),
            final_response: turn.final_response.clone(),
            degraded: turn.degraded,
        };
        match s.answer(&id, &req) {
            Ok(turn) => Ok((StatusCode::OK, Json(reply(&turn))).into_response()),
            Err(AgentError::EmptyQuery { .. }) => Err(bad_request("query is empty")),
            Err(AgentError::BackendUnavailable { turn, .. }) => {
                Ok((StatusCode::SERVICE_UNAVAILABLE, Json(reply(&turn))).into_response())
            }
            Err(AgentError::Retrieval { turn, .. }) => {
                Ok((StatusCode::INTERNAL_SERVER_ERROR, Json(reply(&turn))).into_response())
            }
            Err(e) => Err(ApiError(StatusCode::INTERNAL_SERVER_ERROR, e.to_string())),
        }
    })
    .await
}

async fn get_trace(State(s): State<Arc<Service>>, Path(id): Path<String>) -> ApiResult {
    let Some(rec) = s.session(&id) else {
        return Err(ApiError(StatusCode::NOT_FOUND, format!("unknown session {id:?}")));
    };
    let turns = blocking(move || s.trace(&id).map_err(ApiError::from)).await?;
    Ok(Json(json!({ "session": rec, "turns": turns })).into_response())
}

async fn post_ingest(State(s): State<Arc<Service>>, body: Result<Json<IngestRequest>, JsonRejection>) -> ApiResult {
    let Json(req) = body.map_err(|e| bad_request(e.body_text()))?;
    let out = blocking(move || s.ingest(req).map_err(ApiError::from)).await?;
    Ok(Json(out).into_response())
}

async fn search(State(s): State<Arc<Service>>, params: Result<Query<SearchParams>, QueryRejection>) -> ApiResult {
    let Query(p) = params.map_err(|e| bad_request(e.body_text()))?;
    let q =
        p.q.filter(|q| !q.trim().is_empty())
            .ok_or_else(|| bad_request("missing query parameter q"))?;
    let k = p.k.unwrap_or(s.config.retrieval.k);
    if k == 0 {
        return Err(bad_request("k must be positive"));
    }
    let hits = blocking(move || {
        s.coach
            .retriever()
            .search(&q, k, s.config.retrieval.min_score)
            .map(|hits| (q, hits))
            .map_err(|e| ApiError::from(CliError::from(e)))
    })
    .await?;
    Ok(Json(json!({ "query": hits.0, "k": k, "hits": hits.1 })).into_response())
}

async fn eval_next(State(s): State<Arc<Service>>, params: Result<Query<RaterParams>, QueryRejection>) -> ApiResult {
    let Query(p) = params.map_err(|e| bad_request(e.body_text()))?;
    let rater = p
        .rater
        .filter(|r| !r.is_empty())
        .ok_or_else(|| bad_request("missing query parameter rater"))?;
    let next = blocking(move || s.eval().and_then(|d| d.next(&rater)).map_err(ApiError::from)).await?;
    Ok(Json(next).into_response())
}

async fn eval_rate(State(s): State<Arc<Service>>, body: Result<Json<RatingSubmission>, JsonRejection>) -> ApiResult {
    let Json(sub) = body.map_err(|e| bad_request(e.body_text()))?;
    let ack = blocking(move || s.eval().and_then(|d| d.submit(&sub)).map_err(ApiError::from)).await?;
    Ok((StatusCode::CREATED, Json(ack)).into_response())
}

async fn eval_report(State(s): State<Arc<Service>>, params: Result<Query<ReportParams>, QueryRejection>) -> ApiResult {
    let Query(p) = params.map_err(|e| bad_request(e.body_text()))?;
    let report = blocking(move || {
        {
            let desk = s.eval()?;
            desk.report(p.t_test.unwrap_or(desk.t_test))
        }
        .map_err(ApiError::from)
    })
    .await?;
    Ok(Json(report).into_response())
}

pub fn router(service: Arc<Service>) -> Router {
    Router::new()
        .route("/v1/sessions", post(create_session))
        .route("/v1/sessions/{id}/messages", post(post_message))
        .route("/v1/sessions/{id}/trace", get(get_trace))
        .route("/v1/ingest", post(post_ingest))
        .route("/v1/search", get(search))
        .route("/v1/eval/next", get(eval_next))
        .route("/v1/eval/ratings", post(eval_rate))
        .route("/v1/eval/report", get(eval_report))
        .layer(tower_http::cors::CorsLayer::permissive())
        .with_state(service)
}

/// Serve on `addr` until the process ends. `on_bound` receives the bound
/// address (useful with port 0).
pub fn serve(service: Arc<Service>, addr: SocketAddr, on_bound: impl FnOnce(SocketAddr)) -> Result<(), CliError> {
    let runtime = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| CliError::Io(e.to_string()))?;
    let app = router(service);
    runtime.block_on(async move {
        let listener = tokio::net::TcpListener::bind(addr)
            .await
            .map_err(|e| CliError::Io(format!("bind {addr}: {e}")))?;
        let local = listener.local_addr().map_err(|e| CliError::Io(e.to_string()))?;
        on_bound(local);
        axum::serve(listener, app)
            .await
            .map_err(|e| CliError::Io(e.to_string()))
    })
}
