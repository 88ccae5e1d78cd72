//! HTTP routes under `/v1`.

use axum::body::{Body, Bytes};
use axum::extract::multipart::MultipartRejection;
use axum::extract::rejection::{BytesRejection, QueryRejection};
use axum::extract::{DefaultBodyLimit, Multipart, Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use base64::Engine;
use feedstack_core::{DesignArtifact, Role, SessionState};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use std::sync::Arc;
use tokio::sync::watch;

use crate::error::ApiError;
use crate::hub::{Hub, NewSession};
use crate::stream::frame_stream;

/// Largest accepted request body (artifact uploads included).
pub const MAX_BODY_BYTES: usize = 16 * 1024 * 1024;

#[derive(Clone)]
pub struct AppState {
    pub hub: Arc<Hub>,
    pub shutdown: watch::Receiver<bool>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CreateSessionRequest {
    #[serde(default)]
    pub session_id: Option<String>,
    #[serde(default)]
    pub catalog_id: Option<String>,
    #[serde(default)]
    pub artifact: Option<ArtifactUpload>,
}

/// An inline image: `data` is base64.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArtifactUpload {
    pub name: String,
    pub media_type: String,
    pub data: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CreateSessionResponse {
    pub session_id: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PostMessageRequest {
    pub text: String,
    /// Defaults to `user`.
    #[serde(default)]
    pub role: Option<Role>,
    /// Ask the model for a reply. Defaults to true for user messages.
    #[serde(default)]
    pub auto_reply: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PostMessageResponse {
    pub message_id: String,
    pub seq: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToggleRequest {
    pub principle_id: String,
    pub enabled: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToggleResponse {
    pub principle_id: String,
    pub enabled: bool,
    pub seq: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArtifactResponse {
    pub artifact: DesignArtifact,
}

#[derive(Debug, Clone, Default, Deserialize)]
pub struct EventsQuery {
    #[serde(default)]
    pub from_seq: u64,
    #[serde(default)]
    pub follow: Option<bool>,
}

/// Session state plus the number of background jobs still running.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnapshotView {
    #[serde(flatten)]
    pub state: SessionState,
    pub pending_jobs: usize,
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/v1/health", get(health))
        .route("/v1/sessions", post(create_session).get(list_sessions))
        .route("/v1/sessions/{id}", get(snapshot))
        .route("/v1/sessions/{id}/messages", post(post_message))
        .route("/v1/sessions/{id}/toggles", post(toggle))
        .route("/v1/sessions/{id}/export", get(export))
        .route("/v1/sessions/{id}/events", get(events))
        .route("/v1/sessions/{id}/artifact", post(upload_artifact).get(download_artifact))
        .fallback(|| async { ApiError::not_found("no such route") })
        .method_not_allowed_fallback(|| async {
            let err = ApiError::validation("method not allowed");
            (StatusCode::METHOD_NOT_ALLOWED, Json(err))
        })
        .layer(DefaultBodyLimit::max(MAX_BODY_BYTES))
        .with_state(state)
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> Result<T, ApiError> + Send + 'static) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f)
        .await
        .unwrap_or_else(|e| Err(ApiError::internal(format!("worker failed: {e}"))))
}

/// Parses a JSON body; an empty body reads as `{}`.
fn parse_body<T: DeserializeOwned>(body: Result<Bytes, BytesRejection>) -> Result<T, ApiError> {
    let body = body.map_err(|e| ApiError::validation(e.body_text()))?;
    let body: &[u8] = if body.iter().all(u8::is_ascii_whitespace) { b"{}" } else { &body };
    serde_json::from_slice(body).map_err(|e| ApiError::validation(format!("invalid request body: {e}")))
}

async fn health(State(app): State<AppState>) -> Json<serde_json::Value> {
    let gateway = if app.hub.gateway().is_stub() { "stub" } else { "live" };
    Json(serde_json::json!({ "status": "ok", "gateway": gateway }))
}

async fn list_sessions(State(app): State<AppState>) -> Result<Json<serde_json::Value>, ApiError> {
    let hub = app.hub.clone();
    let ids = blocking(move || hub.session_ids()).await?;
    Ok(Json(serde_json::json!({ "sessions": ids })))
}

async fn create_session(
    State(app): State<AppState>,
    body: Result<Bytes, BytesRejection>,
) -> Result<(StatusCode, Json<CreateSessionResponse>), ApiError> {
    let req: CreateSessionRequest = parse_body(body)?;
    let hub = app.hub.clone();
    let session_id = blocking(move || {
        let artifact = match req.artifact {
            Some(upload) => {
                let bytes = base64::engine::general_purpose::STANDARD
                    .decode(upload.data.as_bytes())
                    .map_err(|e| ApiError::validation(format!("artifact data is not base64: {e}")))?;
                Some(hub.store_artifact(&upload.name, &upload.media_type, &bytes)?)
            }
            None => None,
        };
        hub.create(NewSession {
            session_id: req.session_id,
            catalog_id: req.catalog_id,
            artifact,
        })
    })
    .await?;
    Ok((StatusCode::CREATED, Json(CreateSessionResponse { session_id })))
}

async fn snapshot(State(app): State<AppState>, Path(id): Path<String>) -> Result<Json<SnapshotView>, ApiError> {
    let hub = app.hub.clone();
    let snapshot = blocking(move || hub.snapshot(&id)).await?;
    Ok(Json(SnapshotView {
        state: snapshot.state,
        pending_jobs: snapshot.pending_jobs,
    }))
}

async fn post_message(
    State(app): State<AppState>,
    Path(id): Path<String>,
    body: Result<Bytes, BytesRejection>,
) -> Result<(StatusCode, Json<PostMessageResponse>), ApiError> {
    let req: PostMessageRequest = parse_body(body)?;
    let role = req.role.unwrap_or(Role::User);
    let auto_reply = req.auto_reply.unwrap_or(role == Role::User);
    let hub = app.hub.clone();
    let posted = blocking(move || hub.post_message(&id, role, &req.text, auto_reply)).await?;
    Ok((
        StatusCode::ACCEPTED,
        Json(PostMessageResponse {
            message_id: posted.message_id,
            seq: posted.seq,
        }),
    ))
}

async fn toggle(
    State(app): State<AppState>,
    Path(id): Path<String>,
    body: Result<Bytes, BytesRejection>,
) -> Result<Json<ToggleResponse>, ApiError> {
    let req: ToggleRequest = parse_body(body)?;
    let hub = app.hub.clone();
    let frame = blocking(move || hub.set_toggle(&id, &req.principle_id, req.enabled)).await?;
    match frame.body {
        feedstack_core::FrameBody::TogglesUpdated { principle_id, enabled } => Ok(Json(ToggleResponse {
            principle_id,
            enabled,
            seq: frame.seq,
        })),
        _ => Err(ApiError::internal("unexpected frame for toggle")),
    }
}

async fn export(State(app): State<AppState>, Path(id): Path<String>) -> Result<Response, ApiError> {
    let hub = app.hub.clone();
    let json = blocking(move || hub.export(&id)).await?;
    Ok(([(header::CONTENT_TYPE, "application/json")], json).into_response())
}

async fn events(
    State(app): State<AppState>,
    Path(id): Path<String>,
    query: Result<Query<EventsQuery>, QueryRejection>,
) -> Result<Response, ApiError> {
    let Query(query) = query.map_err(|e| ApiError::validation(e.body_text()))?;
    let hub = app.hub.clone();
    let session_id = id.clone();
    let subscription = blocking(move || hub.subscribe(&session_id, query.from_seq)).await?;
    let body = frame_stream(
        id,
        query.from_seq,
        subscription,
        query.follow.unwrap_or(true),
        app.shutdown.clone(),
    );
    Ok((
        [
            (header::CONTENT_TYPE, "application/x-ndjson"),
            (header::CACHE_CONTROL, "no-cache"),
        ],
        Body::from_stream(body),
    )
        .into_response())
}

async fn upload_artifact(
    State(app): State<AppState>,
    Path(id): Path<String>,
    multipart: Result<Multipart, MultipartRejection>,
) -> Result<Json<ArtifactResponse>, ApiError> {
    let mut multipart = multipart.map_err(|e| ApiError::validation(e.body_text()))?;
    let bad = |e: axum::extract::multipart::MultipartError| ApiError::validation(e.body_text());
    while let Some(field) = multipart.next_field().await.map_err(bad)? {
        let Some(file_name) = field.file_name().map(str::to_string) else {
            continue;
        };
        let media_type = field
            .content_type()
            .map(str::to_string)
            .ok_or_else(|| ApiError::validation("file part has no content type"))?;
        let bytes = field.bytes().await.map_err(bad)?;
        let hub = app.hub.clone();
        let artifact = blocking(move || hub.set_artifact(&id, &file_name, &media_type, &bytes)).await?;
        return Ok(Json(ArtifactResponse { artifact }));
    }
    Err(ApiError::validation("multipart body has no file part"))
}

async fn download_artifact(State(app): State<AppState>, Path(id): Path<String>) -> Result<Response, ApiError> {
    let hub = app.hub.clone();
    let (artifact, bytes) = blocking(move || hub.artifact(&id)).await?;
    Ok(([(header::CONTENT_TYPE, artifact.media_type)], bytes).into_response())
}
