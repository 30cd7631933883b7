//! HTTP/JSON API over [`oed_core::annotate`] sessions.
//!
//! | method | path | body / response |
//! |---|---|---|
//! | `POST` | `/sessions` | [`CreateSession`] → [`SessionCreated`] |
//! | `GET` | `/sessions/{id}/next` | a task, or `{"status":"complete"}` |
//! | `POST` | `/sessions/{id}/submit` | [`LabelSubmission`] → [`SubmitResponse`] |
//! | `GET` | `/sessions/{id}/status` | [`SessionStatus`] |
//! | `GET` | `/sessions/{id}/export` | JSONL corpus |
//!
//! Errors are `{"error": code, "message": text}` with a 4xx or 5xx status.

use std::collections::HashMap;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, RwLock};

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::json;

use oed_core::annotate::{
    AnnotateError, AnnotationSession, LabelSubmission, Mode, NextTask, RetrainMode, Retrainer, SessionConfig,
    SessionStatus, SubmitOutcome,
};
use oed_core::corpus::{load_dataset, Partition};

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CreateSession {
    pub dataset: PathBuf,
    #[serde(default)]
    pub mode: Mode,
    #[serde(default = "one")]
    pub reviewers_required: usize,
    #[serde(default)]
    pub shuffle: Option<u64>,
    #[serde(default)]
    pub seed: Option<u64>,
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SessionCreated {
    pub id: String,
    pub sentences: usize,
    pub mode: Mode,
    pub reviewers_required: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SubmitResponse {
    pub outcome: SubmitOutcome,
    pub labeled: usize,
    pub until_next_retrain: usize,
}

/// Server-wide settings applied to every new session.
#[derive(Clone)]
pub struct ServerConfig {
    pub retrainer: Arc<dyn Retrainer>,
    pub retrain_every: usize,
    pub retrain_mode: RetrainMode,
    pub default_seed: u64,
}

impl ServerConfig {
    pub fn new(retrainer: Arc<dyn Retrainer>) -> Self {
        ServerConfig {
            retrainer,
            retrain_every: oed_core::annotate::DEFAULT_RETRAIN_EVERY,
            retrain_mode: RetrainMode::Background,
            default_seed: 1,
        }
    }
}

#[derive(Clone)]
pub struct AppState {
    config: ServerConfig,
    sessions: Arc<RwLock<HashMap<String, Arc<Mutex<AnnotationSession>>>>>,
    next_id: Arc<AtomicU64>,
}

impl AppState {
    pub fn new(config: ServerConfig) -> Self {
        AppState {
            config,
            sessions: Arc::default(),
            next_id: Arc::new(AtomicU64::new(1)),
        }
    }

    fn session(&self, id: &str) -> Result<Arc<Mutex<AnnotationSession>>, ApiError> {
        self.sessions
            .read()
            .expect("session table lock")
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, "unknown_session", format!("no session {id:?}")))
    }
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    code: &'static str,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        ApiError {
            status,
            code,
            message: message.into(),
        }
    }
}

impl From<AnnotateError> for ApiError {
    fn from(e: AnnotateError) -> Self {
        let status = match &e {
            AnnotateError::UnknownToken => StatusCode::NOT_FOUND,
            AnnotateError::TokenSpent | AnnotateError::DuplicateReviewer(_) | AnnotateError::NothingToExport => {
                StatusCode::CONFLICT
            }
            AnnotateError::LabelLength { .. }
            | AnnotateError::InvalidLabel(_)
            | AnnotateError::EmptyReviewer
            | AnnotateError::Config(_) => StatusCode::UNPROCESSABLE_ENTITY,
            AnnotateError::Suggest(_) | AnnotateError::Retrain(_) | AnnotateError::Io(_) => {
                StatusCode::INTERNAL_SERVER_ERROR
            }
        };
        ApiError::new(status, e.code(), e.to_string())
    }
}

impl From<JsonRejection> for ApiError {
    fn from(e: JsonRejection) -> Self {
        ApiError::new(e.status(), "bad_request", e.body_text())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({ "error": self.code, "message": self.message }))).into_response()
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/sessions", post(create_session))
        .route("/sessions/{id}/next", get(next_task))
        .route("/sessions/{id}/submit", post(submit))
        .route("/sessions/{id}/status", get(status))
        .route("/sessions/{id}/export", get(export))
        .with_state(state)
}

/// Serves the API on `addr` until the process is interrupted.
pub async fn serve(addr: SocketAddr, state: AppState) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("annotation service listening on {}", listener.local_addr()?);
    axum::serve(listener, router(state)).await
}

async fn create_session(
    State(state): State<AppState>,
    body: Result<Json<CreateSession>, JsonRejection>,
) -> Result<(StatusCode, Json<SessionCreated>), ApiError> {
    let Json(req) = body?;
    let dataset = load_dataset(&req.dataset, Partition::Trainval)
        .map_err(|e| ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "invalid_dataset", e.to_string()))?;
    let config = SessionConfig {
        mode: req.mode,
        reviewers_required: req.reviewers_required,
        retrain_every: state.config.retrain_every,
        shuffle: req.shuffle,
        seed: req.seed.unwrap_or(state.config.default_seed),
        retrain_mode: state.config.retrain_mode,
    };
    let id = format!("s{}", state.next_id.fetch_add(1, Ordering::SeqCst));
    let sentences = dataset.len();
    let session = AnnotationSession::new(id.clone(), dataset.sentences, config, Arc::clone(&state.config.retrainer))?;
    state
        .sessions
        .write()
        .expect("session table lock")
        .insert(id.clone(), Arc::new(Mutex::new(session)));
    log::info!("created {} session {id} with {sentences} sentences", req.mode);
    Ok((
        StatusCode::CREATED,
        Json(SessionCreated {
            id,
            sentences,
            mode: req.mode,
            reviewers_required: req.reviewers_required,
        }),
    ))
}

async fn next_task(State(state): State<AppState>, Path(id): Path<String>) -> Result<Response, ApiError> {
    let session = state.session(&id)?;
    let next = session.lock().expect("session lock").next_task()?;
    Ok(match next {
        NextTask::Task(task) => Json(task).into_response(),
        NextTask::Complete => Json(json!({ "status": "complete" })).into_response(),
    })
}

async fn submit(
    State(state): State<AppState>,
    Path(id): Path<String>,
    body: Result<Json<LabelSubmission>, JsonRejection>,
) -> Result<Json<SubmitResponse>, ApiError> {
    let Json(sub) = body?;
    let session = state.session(&id)?;
    let mut s = session.lock().expect("session lock");
    let outcome = s.submit(&sub)?;
    let st = s.status();
    Ok(Json(SubmitResponse {
        outcome,
        labeled: st.labeled,
        until_next_retrain: st.until_next_retrain,
    }))
}

async fn status(State(state): State<AppState>, Path(id): Path<String>) -> Result<Json<SessionStatus>, ApiError> {
    let session = state.session(&id)?;
    let st = session.lock().expect("session lock").status();
    Ok(Json(st))
}

async fn export(State(state): State<AppState>, Path(id): Path<String>) -> Result<Response, ApiError> {
    let session = state.session(&id)?;
    let body = session.lock().expect("session lock").export_jsonl()?;
    Ok(([(header::CONTENT_TYPE, "application/x-ndjson")], body).into_response())
}
