//! Stateless HTTP facade over one model artifact.
//!
//! `POST /predict`, `POST /explain`, `POST /whatif` take original-scale
//! patient records; `GET /model` describes the loaded artifact so a client
//! can build its input form. Work runs on a bounded blocking pool.

use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::State;
use axum::http::{header, Method, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::Router;
use serde::de::DeserializeOwned;
use serde::Serialize;
use survkit::artifact::{FieldIssue, ModelArtifact, PatientInput, ServeError, WhatIfRequest};
use tokio::sync::Semaphore;
use tower_http::cors::{Any, CorsLayer};

#[derive(Clone)]
pub struct AppState {
    artifact: Option<Arc<ModelArtifact>>,
    workers: Arc<Semaphore>,
}

impl AppState {
    pub fn new(artifact: Option<ModelArtifact>, workers: usize) -> Self {
        AppState { artifact: artifact.map(Arc::new), workers: Arc::new(Semaphore::new(workers.max(1))) }
    }
}

#[derive(Debug, Serialize)]
pub struct ErrorBody {
    pub error: String,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub fields: Vec<FieldIssue>,
}

pub struct ApiError {
    status: StatusCode,
    body: ErrorBody,
}

impl ApiError {
    fn new(status: StatusCode, error: impl Into<String>) -> Self {
        ApiError { status, body: ErrorBody { error: error.into(), fields: Vec::new() } }
    }
}

impl From<ServeError> for ApiError {
    fn from(e: ServeError) -> Self {
        match e {
            ServeError::Input(rej) => {
                let status = if rej.hard { StatusCode::UNPROCESSABLE_ENTITY } else { StatusCode::BAD_REQUEST };
                let error = if rej.hard { "input out of range" } else { "invalid input" };
                ApiError { status, body: ErrorBody { error: error.into(), fields: rej.errors } }
            }
            ServeError::Model(e) => ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        json_response(self.status, &self.body)
    }
}

/// Compact JSON plus a trailing newline, the same bytes `survkit predict` prints.
pub fn json_body<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string(value).expect("response serializes");
    s.push('\n');
    s
}

fn json_response<T: Serialize>(status: StatusCode, value: &T) -> Response {
    (status, [(header::CONTENT_TYPE, "application/json")], json_body(value)).into_response()
}

fn parse<T: DeserializeOwned>(body: &Bytes) -> Result<T, ApiError> {
    serde_json::from_slice(body).map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, format!("malformed JSON body: {e}")))
}

fn loaded(state: &AppState) -> Result<Arc<ModelArtifact>, ApiError> {
    state.artifact.clone().ok_or_else(|| ApiError::new(StatusCode::SERVICE_UNAVAILABLE, "no model artifact loaded"))
}

async fn run_blocking<T, F>(state: &AppState, f: F) -> Result<T, ApiError>
where
    T: Send + 'static,
    F: FnOnce() -> Result<T, ApiError> + Send + 'static,
{
    let _permit = state
        .workers
        .clone()
        .acquire_owned()
        .await
        .map_err(|_| ApiError::new(StatusCode::SERVICE_UNAVAILABLE, "worker pool closed"))?;
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, format!("worker failed: {e}")))?
}

async fn predict(State(state): State<AppState>, body: Bytes) -> Result<Response, ApiError> {
    let art = loaded(&state)?;
    let input: PatientInput = parse(&body)?;
    let resp = run_blocking(&state, move || Ok(art.predict(&input)?)).await?;
    Ok(json_response(StatusCode::OK, &resp))
}

async fn explain(State(state): State<AppState>, body: Bytes) -> Result<Response, ApiError> {
    let art = loaded(&state)?;
    let input: PatientInput = parse(&body)?;
    let resp = run_blocking(&state, move || Ok(art.explain(&input)?)).await?;
    Ok(json_response(StatusCode::OK, &resp))
}

async fn whatif(State(state): State<AppState>, body: Bytes) -> Result<Response, ApiError> {
    let art = loaded(&state)?;
    let req: WhatIfRequest = parse(&body)?;
    let resp = run_blocking(&state, move || Ok(art.whatif(&req)?)).await?;
    Ok(json_response(StatusCode::OK, &resp))
}

async fn model(State(state): State<AppState>) -> Result<Response, ApiError> {
    let art = loaded(&state)?;
    Ok(json_response(StatusCode::OK, &art.metadata()))
}

async fn health() -> &'static str {
    "ok\n"
}

pub fn router(state: AppState) -> Router {
    let cors = CorsLayer::new()
        .allow_origin(Any)
        .allow_methods([Method::GET, Method::POST])
        .allow_headers([header::CONTENT_TYPE]);
    Router::new()
        .route("/predict", post(predict))
        .route("/explain", post(explain))
        .route("/whatif", post(whatif))
        .route("/model", get(model))
        .route("/health", get(health))
        .layer(cors)
        .with_state(state)
}
