use std::path::PathBuf;
use std::sync::Arc;

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use tower_http::services::ServeDir;

use crate::service::SessionService;
use crate::session::SessionError;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LoginRequest {
    pub anon_id: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubmitRequest {
    pub prompt: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub task_id: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
    pub message: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub remaining_seconds: Option<i64>,
}

pub struct ApiError(StatusCode, ErrorBody);

impl ApiError {
    fn new(status: StatusCode, code: &str, message: impl Into<String>) -> Self {
        Self(
            status,
            ErrorBody {
                error: code.into(),
                message: message.into(),
                remaining_seconds: None,
            },
        )
    }
}

impl From<SessionError> for ApiError {
    fn from(e: SessionError) -> Self {
        let (status, code) = match &e {
            SessionError::Unauthorized => (StatusCode::UNAUTHORIZED, "unauthorized"),
            SessionError::Expired => (StatusCode::GONE, "expired"),
            SessionError::Duplicate(_) => (StatusCode::CONFLICT, "duplicate"),
            SessionError::WrongTask(_) => (StatusCode::CONFLICT, "wrong_task"),
            SessionError::Complete => (StatusCode::CONFLICT, "complete"),
            SessionError::BetweenRounds => (StatusCode::CONFLICT, "between_rounds"),
            SessionError::NotShown => (StatusCode::CONFLICT, "not_shown"),
            SessionError::Empty => (StatusCode::BAD_REQUEST, "empty"),
            SessionError::Timer { .. } => (StatusCode::TOO_EARLY, "timer"),
            SessionError::Storage(_) => (StatusCode::INTERNAL_SERVER_ERROR, "storage"),
        };
        let mut err = ApiError::new(status, code, e.to_string());
        if let SessionError::Timer { remaining } = e {
            err.1.remaining_seconds = Some(remaining);
        }
        err
    }
}

impl From<JsonRejection> for ApiError {
    fn from(e: JsonRejection) -> Self {
        ApiError::new(StatusCode::BAD_REQUEST, "bad_request", e.body_text())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(self.1)).into_response()
    }
}

type ApiResult<T> = Result<Json<T>, ApiError>;

fn token(headers: &HeaderMap) -> Result<&str, ApiError> {
    headers
        .get(header::AUTHORIZATION)
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.strip_prefix("Bearer "))
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .ok_or_else(|| ApiError::new(StatusCode::UNAUTHORIZED, "unauthorized", "missing bearer token"))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LoginResponse {
    pub token: String,
    pub progress: crate::service::Progress,
}

async fn login(
    State(svc): State<Arc<SessionService>>,
    body: Result<Json<LoginRequest>, JsonRejection>,
) -> ApiResult<LoginResponse> {
    let Json(req) = body?;
    let (token, progress) = svc.login(req.anon_id.trim()).await?;
    Ok(Json(LoginResponse { token, progress }))
}

async fn current_task(State(svc): State<Arc<SessionService>>, headers: HeaderMap) -> ApiResult<crate::service::CurrentTask> {
    Ok(Json(svc.current_task(token(&headers)?).await?))
}

async fn submit(
    State(svc): State<Arc<SessionService>>,
    headers: HeaderMap,
    body: Result<Json<SubmitRequest>, JsonRejection>,
) -> ApiResult<crate::service::SubmitOutcome> {
    let t = token(&headers)?;
    let Json(req) = body?;
    Ok(Json(svc.submit(t, &req.prompt, req.task_id.as_deref()).await?))
}

async fn progress(State(svc): State<Arc<SessionService>>, headers: HeaderMap) -> ApiResult<crate::service::Progress> {
    Ok(Json(svc.progress(token(&headers)?).await?))
}

async fn heartbeat(State(svc): State<Arc<SessionService>>, headers: HeaderMap) -> ApiResult<crate::service::Progress> {
    Ok(Json(svc.heartbeat(token(&headers)?).await?))
}

async fn task_image(State(svc): State<Arc<SessionService>>, Path(id): Path<String>) -> Result<Response, ApiError> {
    let not_found = || ApiError::new(StatusCode::NOT_FOUND, "not_found", format!("no image for task {id}"));
    let image_ref = svc.task(&id).and_then(|t| t.target_image.clone()).ok_or_else(not_found)?;
    let image = image_ref
        .load(svc.image_root())
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "image", e.to_string()))?;
    Ok(([(header::CONTENT_TYPE, image.media_type.clone())], image.bytes).into_response())
}

/// API routes, plus the UI bundle as a static fallback when given.
pub fn router(service: Arc<SessionService>, ui_dir: Option<PathBuf>) -> Router {
    let api = Router::new()
        .route("/api/login", post(login))
        .route("/api/session/current-task", get(current_task))
        .route("/api/session/submit", post(submit))
        .route("/api/session/progress", get(progress))
        .route("/api/session/heartbeat", post(heartbeat))
        .route("/api/tasks/{id}/image", get(task_image))
        .with_state(service);
    match ui_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api,
    }
}
