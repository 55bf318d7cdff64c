//! HTTP+JSON front end for the self-paced reading experiment.
//!
//! All state lives in one [`Store`]; writes take its lock exclusively, so
//! events of a session are applied one at a time, while exports share a read
//! lock. Every accepted event is on disk before the response is sent.

use std::net::SocketAddr;
use std::sync::Arc;

use axum::extract::{Path, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use causalread::experiment::{ExperimentError, NextItem, Question, Store};
use serde::{Deserialize, Serialize};
use tokio::net::TcpListener;
use tokio::sync::RwLock;

#[derive(Clone)]
pub struct AppState {
    store: Arc<RwLock<Store>>,
    /// Seed for sessions created without one; the session count is added.
    base_seed: u64,
}

impl AppState {
    pub fn new(store: Store, base_seed: u64) -> Self {
        AppState { store: Arc::new(RwLock::new(store)), base_seed }
    }

    pub fn store(&self) -> Arc<RwLock<Store>> {
        self.store.clone()
    }
}

#[derive(Debug, Deserialize)]
pub struct CreateSession {
    pub participant_id: String,
    /// Defaults to the number of sessions created so far.
    pub counterbalance_index: Option<u64>,
    pub seed: Option<u64>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SessionCreated {
    pub session_id: String,
    pub participant_id: String,
    pub n_trials: usize,
    pub created_at: i64,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Advance {
    pub chunk_index: usize,
    pub shown_at: i64,
    pub advanced_at: i64,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Rating {
    pub trial_index: usize,
    pub question: Question,
    pub value: i64,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Familiarity {
    pub trial_index: usize,
    pub unfamiliar: bool,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
    pub message: String,
}

pub struct ApiError(ExperimentError);

impl From<ExperimentError> for ApiError {
    fn from(e: ExperimentError) -> Self {
        ApiError(e)
    }
}

/// Status code and machine-readable kind for an experiment error.
pub fn classify(e: &ExperimentError) -> (StatusCode, &'static str) {
    use ExperimentError::*;
    match e {
        SessionNotFound(_) => (StatusCode::NOT_FOUND, "session_not_found"),
        SessionComplete(_) => (StatusCode::GONE, "session_complete"),
        SessionExists(_) => (StatusCode::CONFLICT, "session_exists"),
        OutOfOrderChunk { .. } => (StatusCode::CONFLICT, "out_of_order_chunk"),
        TrialIncomplete(_) => (StatusCode::CONFLICT, "trial_incomplete"),
        DuplicateRating { .. } => (StatusCode::CONFLICT, "duplicate_rating"),
        DuplicateFamiliarity(_) => (StatusCode::CONFLICT, "duplicate_familiarity"),
        ClockSkew { .. } => (StatusCode::UNPROCESSABLE_ENTITY, "clock_skew"),
        ValueOutOfRange(_) => (StatusCode::UNPROCESSABLE_ENTITY, "value_out_of_range"),
        TrialOutOfRange(_) => (StatusCode::UNPROCESSABLE_ENTITY, "trial_out_of_range"),
        InsufficientStories { .. } => (StatusCode::SERVICE_UNAVAILABLE, "insufficient_stories"),
        CorruptLog { .. } | Io { .. } | Corpus(_) | Csv(_) => (StatusCode::INTERNAL_SERVER_ERROR, "internal"),
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let (status, kind) = classify(&self.0);
        (status, Json(ErrorBody { error: kind.into(), message: self.0.to_string() })).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

async fn create_session(State(app): State<AppState>, Json(req): Json<CreateSession>) -> ApiResult<(StatusCode, Json<SessionCreated>)> {
    let mut store = app.store.write().await;
    let n = store.session_count() as u64;
    let plan = store.create_session(
        &req.participant_id,
        req.counterbalance_index.unwrap_or(n),
        req.seed.unwrap_or(app.base_seed.wrapping_add(n)),
    )?;
    Ok((
        StatusCode::CREATED,
        Json(SessionCreated {
            session_id: plan.session_id,
            participant_id: plan.participant_id,
            n_trials: plan.trials.len(),
            created_at: plan.created_at,
        }),
    ))
}

async fn next(State(app): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<NextItem>> {
    Ok(Json(app.store.read().await.next_chunk(&id)?))
}

async fn advance(State(app): State<AppState>, Path(id): Path<String>, Json(req): Json<Advance>) -> ApiResult<impl IntoResponse> {
    let ev = app.store.write().await.record_advance(&id, req.chunk_index, req.shown_at, req.advanced_at)?;
    Ok((StatusCode::CREATED, Json(ev)))
}

async fn rating(State(app): State<AppState>, Path(id): Path<String>, Json(req): Json<Rating>) -> ApiResult<impl IntoResponse> {
    let ev = app.store.write().await.record_rating(&id, req.trial_index, req.question, req.value)?;
    Ok((StatusCode::CREATED, Json(ev)))
}

async fn familiarity(State(app): State<AppState>, Path(id): Path<String>, Json(req): Json<Familiarity>) -> ApiResult<impl IntoResponse> {
    let ev = app.store.write().await.record_familiarity(&id, req.trial_index, req.unfamiliar)?;
    Ok((StatusCode::CREATED, Json(ev)))
}

fn csv(body: String) -> Response {
    ([(header::CONTENT_TYPE, "text/csv; charset=utf-8")], body).into_response()
}

async fn export_trials(State(app): State<AppState>) -> ApiResult<Response> {
    Ok(csv(app.store.read().await.export_trials()?.0))
}

async fn export_ratings(State(app): State<AppState>) -> ApiResult<Response> {
    Ok(csv(app.store.read().await.export_trials()?.1))
}

async fn export_familiarity(State(app): State<AppState>) -> ApiResult<Response> {
    Ok(csv(app.store.read().await.export_familiarity()?))
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/sessions", post(create_session))
        .route("/sessions/{id}/next", get(next))
        .route("/sessions/{id}/advance", post(advance))
        .route("/sessions/{id}/rating", post(rating))
        .route("/sessions/{id}/familiarity", post(familiarity))
        .route("/export/trials.csv", get(export_trials))
        .route("/export/ratings.csv", get(export_ratings))
        .route("/export/familiarity.csv", get(export_familiarity))
        .with_state(state)
}

#[derive(Debug, thiserror::Error)]
pub enum ServeError {
    #[error("cannot bind {addr}: {source}")]
    Bind { addr: SocketAddr, source: std::io::Error },
    #[error("server failed: {0}")]
    Io(#[from] std::io::Error),
}

pub async fn bind(addr: SocketAddr) -> Result<TcpListener, ServeError> {
    TcpListener::bind(addr).await.map_err(|source| ServeError::Bind { addr, source })
}

/// Serves until `shutdown` resolves. In-flight requests finish first; each
/// accepted event was already synced to the log.
pub async fn serve(
    listener: TcpListener,
    state: AppState,
    shutdown: impl std::future::Future<Output = ()> + Send + 'static,
) -> Result<(), ServeError> {
    axum::serve(listener, router(state)).with_graceful_shutdown(shutdown).await?;
    Ok(())
}
