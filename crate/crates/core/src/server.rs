//! HTTP surface over [`Engine`]. Every handler runs the blocking engine call
//! on the blocking pool.

use std::net::SocketAddr;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::api::{ErrorBody, ForgetRequest, Health, MemoryView, PendingView, UserQuery, VerifyRequest};
use crate::encoder::RawCapture;
use crate::engine::Engine;
use crate::error::Error;

#[derive(Clone)]
struct AppState {
    engine: Arc<Engine>,
    provider_mode: Arc<str>,
}

pub struct ApiError(Error);

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        Self(e)
    }
}

pub fn status_for(e: &Error) -> StatusCode {
    match e {
        Error::InvalidArgument(_)
        | Error::MissingContext(_)
        | Error::UnsupportedInput(_)
        | Error::WrongEndpoint(_) => StatusCode::BAD_REQUEST,
        Error::NotFound(_) => StatusCode::NOT_FOUND,
        Error::Conflict(_) => StatusCode::CONFLICT,
        Error::Gated(_) => StatusCode::FORBIDDEN,
        Error::Unanswerable { .. } | Error::RevisionUnavailable(_) | Error::Precondition(_) => {
            StatusCode::UNPROCESSABLE_ENTITY
        }
        Error::Transport(_) | Error::MalformedOutput(_) => StatusCode::BAD_GATEWAY,
        Error::Persistence { .. } | Error::Corrupt { .. } | Error::Migration { .. } | Error::Config(_) => {
            StatusCode::INTERNAL_SERVER_ERROR
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = status_for(&self.0);
        if status.is_server_error() {
            tracing::error!(error = %self.0, "request failed");
        }
        let body = serde_json::json!({ "error": ErrorBody::from(&self.0) });
        (status, Json(body)).into_response()
    }
}

type ApiResult<T> = Result<Json<T>, ApiError>;

fn parse<T: DeserializeOwned>(body: &Bytes) -> Result<T, Error> {
    serde_json::from_slice(body).map_err(|e| Error::InvalidArgument(format!("request body: {e}")))
}

async fn blocking<T, F>(state: &AppState, f: F) -> ApiResult<T>
where
    T: Serialize + Send + 'static,
    F: FnOnce(&Engine) -> crate::Result<T> + Send + 'static,
{
    let engine = Arc::clone(&state.engine);
    tokio::task::spawn_blocking(move || f(&engine))
        .await
        .map_err(|e| ApiError(Error::Precondition(format!("worker failed: {e}"))))?
        .map(Json)
        .map_err(ApiError)
}

async fn query(State(s): State<AppState>, body: Bytes) -> Response {
    match parse::<RawCapture>(&body) {
        Ok(c) => blocking(&s, move |e| e.handle_query(&c)).await.into_response(),
        Err(e) => ApiError(e).into_response(),
    }
}

async fn remember(State(s): State<AppState>, body: Bytes) -> Response {
    match parse::<RawCapture>(&body) {
        Ok(c) => blocking(&s, move |e| e.handle_remember(&c)).await.into_response(),
        Err(e) => ApiError(e).into_response(),
    }
}

async fn forget(State(s): State<AppState>, body: Bytes) -> Response {
    match parse::<ForgetRequest>(&body) {
        Ok(r) => blocking(&s, move |e| e.handle_forget(&r)).await.into_response(),
        Err(e) => ApiError(e).into_response(),
    }
}

async fn verify(State(s): State<AppState>, body: Bytes) -> Response {
    match parse::<VerifyRequest>(&body) {
        Ok(r) => blocking(&s, move |e| e.verify(&r)).await.into_response(),
        Err(e) => ApiError(e).into_response(),
    }
}

fn user_param(q: Result<Query<UserQuery>, axum::extract::rejection::QueryRejection>) -> Result<UserQuery, ApiError> {
    q.map(|Query(u)| u)
        .map_err(|e| ApiError(Error::InvalidArgument(format!("query string: {e}"))))
}

async fn memories(
    State(s): State<AppState>,
    q: Result<Query<UserQuery>, axum::extract::rejection::QueryRejection>,
) -> ApiResult<Vec<MemoryView>> {
    let u = user_param(q)?;
    blocking(&s, move |e| {
        Ok(e.memories(&u.user_id)?.iter().map(MemoryView::from).collect())
    })
    .await
}

async fn pending(
    State(s): State<AppState>,
    q: Result<Query<UserQuery>, axum::extract::rejection::QueryRejection>,
) -> ApiResult<Vec<PendingView>> {
    let u = user_param(q)?;
    blocking(&s, move |e| {
        Ok(e.pending(&u.user_id)?.iter().map(PendingView::from).collect())
    })
    .await
}

async fn health(State(s): State<AppState>) -> Json<Health> {
    Json(Health {
        status: "ok".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        provider_mode: s.provider_mode.to_string(),
        embedding_dim: s.engine.config().embedding_dim,
    })
}

pub fn router(engine: Arc<Engine>, provider_mode: &str) -> Router {
    let state = AppState {
        engine,
        provider_mode: provider_mode.into(),
    };
    Router::new()
        .route("/v1/query", post(query))
        .route("/v1/remember", post(remember))
        .route("/v1/forget", post(forget))
        .route("/v1/verify", post(verify))
        .route("/v1/memories", get(memories))
        .route("/v1/pending", get(pending))
        .route("/v1/health", get(health))
        .with_state(state)
}

/// Serves until `shutdown` resolves, then compacts the loaded corpora.
pub async fn serve(
    engine: Arc<Engine>,
    addr: SocketAddr,
    provider_mode: &str,
    shutdown: impl std::future::Future<Output = ()> + Send + 'static,
) -> anyhow::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    tracing::info!(addr = %listener.local_addr()?, "listening");
    axum::serve(listener, router(Arc::clone(&engine), provider_mode))
        .with_graceful_shutdown(shutdown)
        .await?;
    let e = Arc::clone(&engine);
    tokio::task::spawn_blocking(move || e.flush()).await??;
    Ok(())
}
