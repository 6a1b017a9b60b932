//! HTTP API for live adaptive sessions.
//!
//! Every number in a response comes straight from [`catbn::session::Session`];
//! this module only translates between the wire format (1-based states,
//! variable ids) and the library.

use std::collections::{BTreeMap, HashMap};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::sync::{Arc, Mutex, RwLock};
use std::time::{Duration, Instant};

use axum::body::Bytes;
use axum::extract::{Path as UrlPath, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use catbn::session::{Session, TerminationRule};
use catbn::zoo::TestBlueprint;
use catbn::{Error, Evidence, InferenceEngine, Role};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub code: String,
    pub message: String,
}

#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub body: ErrorBody,
}

impl ApiError {
    fn new(status: StatusCode, code: &str, message: impl Into<String>) -> Self {
        ApiError { status, body: ErrorBody { code: code.into(), message: message.into() } }
    }

    fn not_found(id: &str) -> Self {
        ApiError::new(StatusCode::NOT_FOUND, "session_not_found", format!("no session `{id}`"))
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let message = e.to_string();
        match e {
            Error::AlreadyAnswered(_) | Error::DuplicateEvidence(_) => {
                ApiError::new(StatusCode::CONFLICT, "already_answered", message)
            }
            Error::StateOutOfRange { .. } => ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "invalid_state", message),
            Error::UnknownVariable(_) => ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "unknown_variable", message),
            Error::NotRemaining(_) => ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "not_in_pool", message),
            Error::ImpossibleEvidence => ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "impossible_evidence", message),
            Error::Spec(_) => ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "invalid_request", message),
            _ => ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", message),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CreateSession {
    pub model: String,
    /// Student information, 1-based states keyed by variable id.
    #[serde(default)]
    pub info_evidence: BTreeMap<String, usize>,
    #[serde(default)]
    pub termination: Option<TerminationRule>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnswerRequest {
    pub question: String,
    /// 1-based state.
    pub state: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NextQuestion {
    pub done: bool,
    pub question: Option<String>,
    pub ig: Option<f64>,
    pub step: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Created {
    pub session_id: String,
    pub model: String,
    pub first_question: NextQuestion,
    pub entropy: f64,
    pub skill_posteriors: BTreeMap<String, Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Answered {
    pub step: usize,
    pub question: String,
    pub state: usize,
    pub ig: f64,
    pub entropy: f64,
    pub skill_posteriors: BTreeMap<String, Vec<f64>>,
    pub done: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictedAnswer {
    pub question: String,
    /// 1-based.
    pub state: usize,
    pub probabilities: Vec<f64>,
    pub tie: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Estimates {
    pub model: String,
    pub step: usize,
    pub done: bool,
    pub entropy: f64,
    pub entropy_trace: Vec<f64>,
    pub skill_posteriors: BTreeMap<String, Vec<f64>>,
    pub predictions: Vec<PredictedAnswer>,
}

/// Entries of the append-only session log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
enum LogEvent {
    Create { session_id: String, request: CreateSession },
    Answer { session_id: String, question: String, state: usize },
    Delete { session_id: String },
}

struct Entry {
    model: String,
    last_access: Instant,
    session: Session,
}

/// Shared server state: read-only models and per-session locks.
pub struct AppState {
    models: BTreeMap<String, Arc<InferenceEngine>>,
    blueprint: Option<TestBlueprint>,
    sessions: RwLock<HashMap<String, Arc<Mutex<Entry>>>>,
    ttl: Option<Duration>,
    log: Option<Mutex<File>>,
}

impl AppState {
    pub fn new(models: BTreeMap<String, Arc<InferenceEngine>>, blueprint: Option<TestBlueprint>) -> Self {
        AppState { models, blueprint, sessions: RwLock::new(HashMap::new()), ttl: None, log: None }
    }

    /// Sessions idle for longer than `ttl` are dropped.
    pub fn with_ttl(mut self, ttl: Duration) -> Self {
        self.ttl = Some(ttl);
        self
    }

    /// Replays `path` if it exists, then appends every later mutation to it.
    pub fn with_log(mut self, path: &Path) -> anyhow::Result<Self> {
        if path.exists() {
            let reader = BufReader::new(File::open(path)?);
            for (n, line) in reader.lines().enumerate() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                let event: LogEvent = serde_json::from_str(&line)
                    .map_err(|e| anyhow::anyhow!("{}:{}: {e}", path.display(), n + 1))?;
                self.replay(event);
            }
        }
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        self.log = Some(Mutex::new(file));
        Ok(self)
    }

    fn replay(&self, event: LogEvent) {
        // Only successful mutations are logged; an event that fails here
        // refers to a model that is no longer loaded and is skipped.
        match event {
            LogEvent::Create { session_id, request } => {
                if let Ok(entry) = self.open_session(&request) {
                    self.sessions.write().unwrap().insert(session_id, Arc::new(Mutex::new(entry)));
                }
            }
            LogEvent::Answer { session_id, question, state } => {
                if let Some(entry) = self.sessions.read().unwrap().get(&session_id) {
                    let mut entry = entry.lock().unwrap();
                    let _ = answer(&mut entry.session, &question, state);
                }
            }
            LogEvent::Delete { session_id } => {
                self.sessions.write().unwrap().remove(&session_id);
            }
        }
    }

    fn append(&self, event: &LogEvent) -> ApiResult<()> {
        if let Some(log) = &self.log {
            let mut line = serde_json::to_string(event).expect("event serializes");
            line.push('\n');
            let mut file = log.lock().unwrap();
            file.write_all(line.as_bytes())
                .and_then(|_| file.flush())
                .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "log_failed", e.to_string()))?;
        }
        Ok(())
    }

    pub fn session_count(&self) -> usize {
        self.sessions.read().unwrap().len()
    }

    fn open_session(&self, req: &CreateSession) -> ApiResult<Entry> {
        let engine = self.models.get(&req.model).ok_or_else(|| {
            ApiError::new(
                StatusCode::UNPROCESSABLE_ENTITY,
                "unknown_model",
                format!("no model `{}` is loaded", req.model),
            )
        })?;
        let net = engine.network();
        let mut evidence = Evidence::new();
        for (id, &state) in &req.info_evidence {
            let v = net.index_of(id)?;
            if net.variables[v].role != Role::Info {
                return Err(ApiError::new(
                    StatusCode::UNPROCESSABLE_ENTITY,
                    "not_info",
                    format!("`{id}` is not a student information variable"),
                ));
            }
            evidence.observe(v, wire_state(&net.variables[v].id, state, net.variables[v].cardinality)?)?;
        }
        let session = Session::new(engine.clone(), evidence, req.termination.unwrap_or(TerminationRule::Exhaust))?;
        Ok(Entry { model: req.model.clone(), last_access: Instant::now(), session })
    }

    fn entry(&self, id: &str) -> ApiResult<Arc<Mutex<Entry>>> {
        let entry = self.sessions.read().unwrap().get(id).cloned().ok_or_else(|| ApiError::not_found(id))?;
        if let Some(ttl) = self.ttl {
            let idle = entry.lock().unwrap().last_access.elapsed();
            if idle > ttl {
                self.sessions.write().unwrap().remove(id);
                return Err(ApiError::new(StatusCode::NOT_FOUND, "session_expired", format!("session `{id}` expired")));
            }
        }
        Ok(entry)
    }

    fn purge_expired(&self) {
        if let Some(ttl) = self.ttl {
            self.sessions
                .write()
                .unwrap()
                .retain(|_, e| e.lock().map(|e| e.last_access.elapsed() <= ttl).unwrap_or(false));
        }
    }
}

fn wire_state(id: &str, state: usize, cardinality: usize) -> ApiResult<usize> {
    if state == 0 || state > cardinality {
        return Err(ApiError::new(
            StatusCode::UNPROCESSABLE_ENTITY,
            "invalid_state",
            format!("state {state} of `{id}` is outside 1..={cardinality}"),
        ));
    }
    Ok(state - 1)
}

fn answer(session: &mut Session, question: &str, state: usize) -> ApiResult<Answered> {
    let engine = session.engine().clone();
    let net = engine.network();
    let q = net.index_of(question)?;
    let var = &net.variables[q];
    if var.role != Role::Question {
        return Err(ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "not_question", format!("`{question}` is not a question")));
    }
    if session.evidence().contains(q) {
        return Err(Error::AlreadyAnswered(question.to_string()).into());
    }
    let record = session.submit_answer(q, wire_state(question, state, var.cardinality)?)?.clone();
    Ok(Answered {
        step: record.step,
        question: record.asked,
        state: record.answer,
        ig: record.ig,
        entropy: record.entropy_after,
        skill_posteriors: record.skill_posteriors,
        done: session.is_finished(),
    })
}

fn posteriors(session: &Session) -> BTreeMap<String, Vec<f64>> {
    session.skill_estimates().into_iter().map(|d| (d.variable, d.probabilities)).collect()
}

fn next_question(session: &mut Session) -> ApiResult<NextQuestion> {
    let choice = session.select_next()?;
    let net = session.engine().network();
    Ok(NextQuestion {
        done: choice.is_none(),
        question: choice.map(|c| net.variables[c.question].id.clone()),
        ig: choice.map(|c| c.ig),
        step: session.step(),
    })
}

fn parse<T: for<'de> Deserialize<'de>>(body: &Bytes) -> ApiResult<T> {
    serde_json::from_slice(body)
        .map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, "invalid_body", e.to_string()))
}

async fn create(State(app): State<Arc<AppState>>, body: Bytes) -> ApiResult<(StatusCode, Json<Created>)> {
    app.purge_expired();
    let req: CreateSession = parse(&body)?;
    let mut entry = app.open_session(&req)?;
    let first_question = next_question(&mut entry.session)?;
    let created = Created {
        session_id: uuid::Uuid::new_v4().simple().to_string(),
        model: entry.model.clone(),
        first_question,
        entropy: entry.session.current_entropy(),
        skill_posteriors: posteriors(&entry.session),
    };
    app.append(&LogEvent::Create { session_id: created.session_id.clone(), request: req })?;
    app.sessions
        .write()
        .unwrap()
        .insert(created.session_id.clone(), Arc::new(Mutex::new(entry)));
    Ok((StatusCode::CREATED, Json(created)))
}

async fn next(State(app): State<Arc<AppState>>, UrlPath(id): UrlPath<String>) -> ApiResult<Json<NextQuestion>> {
    let entry = app.entry(&id)?;
    let mut entry = entry.lock().unwrap();
    entry.last_access = Instant::now();
    Ok(Json(next_question(&mut entry.session)?))
}

async fn submit(
    State(app): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
    body: Bytes,
) -> ApiResult<Json<Answered>> {
    let req: AnswerRequest = parse(&body)?;
    let entry = app.entry(&id)?;
    let mut entry = entry.lock().unwrap();
    entry.last_access = Instant::now();
    let out = answer(&mut entry.session, &req.question, req.state)?;
    app.append(&LogEvent::Answer { session_id: id, question: req.question, state: req.state })?;
    Ok(Json(out))
}

async fn estimates(State(app): State<Arc<AppState>>, UrlPath(id): UrlPath<String>) -> ApiResult<Json<Estimates>> {
    let entry = app.entry(&id)?;
    let mut entry = entry.lock().unwrap();
    entry.last_access = Instant::now();
    let s = &entry.session;
    let net = s.engine().network();
    Ok(Json(Estimates {
        model: entry.model.clone(),
        step: s.step(),
        done: s.is_finished(),
        entropy: s.current_entropy(),
        entropy_trace: s.entropy_trace().to_vec(),
        skill_posteriors: posteriors(s),
        predictions: s
            .predict_answers()
            .into_iter()
            .map(|p| PredictedAnswer {
                question: net.variables[p.question].id.clone(),
                state: p.state + 1,
                probabilities: p.distribution.probabilities,
                tie: p.tie,
            })
            .collect(),
    }))
}

async fn transcript(State(app): State<Arc<AppState>>, UrlPath(id): UrlPath<String>) -> ApiResult<Json<Value>> {
    let entry = app.entry(&id)?;
    let mut entry = entry.lock().unwrap();
    entry.last_access = Instant::now();
    Ok(Json(serde_json::to_value(entry.session.transcript()).expect("transcript serializes")))
}

async fn delete(State(app): State<Arc<AppState>>, UrlPath(id): UrlPath<String>) -> ApiResult<StatusCode> {
    app.entry(&id)?;
    app.append(&LogEvent::Delete { session_id: id.clone() })?;
    app.sessions.write().unwrap().remove(&id);
    Ok(StatusCode::NO_CONTENT)
}

async fn models(State(app): State<Arc<AppState>>) -> Json<Value> {
    let list: Vec<Value> = app
        .models
        .iter()
        .map(|(id, engine)| {
            let net = engine.network();
            let ids = |role| net.vars_with_role(role).into_iter().map(|v| net.variables[v].id.clone()).collect::<Vec<_>>();
            json!({
                "id": id,
                "skills": net.estimated_vars().into_iter().map(|v| &net.variables[v]).collect::<Vec<_>>(),
                "questions": ids(Role::Question),
                "info": ids(Role::Info),
            })
        })
        .collect();
    Json(Value::Array(list))
}

async fn blueprint(State(app): State<Arc<AppState>>) -> ApiResult<Json<TestBlueprint>> {
    app.blueprint
        .clone()
        .map(Json)
        .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, "no_blueprint", "the server was started without a blueprint"))
}

async fn health() -> Json<Value> {
    Json(json!({ "status": "ok" }))
}

pub fn router(app: Arc<AppState>) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/models", get(models))
        .route("/blueprint", get(blueprint))
        .route("/sessions", post(create))
        .route("/sessions/{id}", axum::routing::delete(delete))
        .route("/sessions/{id}/next", get(next))
        .route("/sessions/{id}/answers", post(submit))
        .route("/sessions/{id}/estimates", get(estimates))
        .route("/sessions/{id}/transcript", get(transcript))
        .with_state(app)
}

/// Serves `app` on `bind` until Ctrl-C.
pub async fn serve(app: Arc<AppState>, bind: &str) -> anyhow::Result<()> {
    let listener = tokio::net::TcpListener::bind(bind).await?;
    eprintln!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router(app))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}
