//! JSON-over-HTTP front end for loaded retrieval artifacts.
//!
//! - `POST /query` with `{"text": "...", "k": 5}` answers with
//!   `{"results": [{"id", "question", "answer", "score", "cosine"}], "latency_ms": ...}`.
//!   `k` defaults to 10.
//! - `GET /healthz` answers `{"status": "ok", "items": N}`.
//!
//! Each query runs on the blocking pool, so a panic inside one request
//! becomes a 500 for that request only.

use std::future::Future;
use std::net::SocketAddr;
use std::sync::Arc;
use std::time::Instant;

use axum::body::Bytes;
use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use faqsearch_core::retrieval::{answer_query_with, Artifacts, QueryOptions, QueryRow};
use serde::{Deserialize, Serialize};
use tokio::net::TcpListener;

pub const DEFAULT_K: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QueryRequest {
    pub text: String,
    #[serde(default)]
    pub k: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryResponse {
    pub results: Vec<QueryRow>,
    pub latency_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Health {
    pub status: String,
    pub items: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
}

#[derive(Clone)]
struct AppState {
    artifacts: Arc<Artifacts>,
    options: QueryOptions,
}

fn error(status: StatusCode, message: impl Into<String>) -> Response {
    (status, Json(ErrorBody { error: message.into() })).into_response()
}

async fn healthz(State(state): State<AppState>) -> Json<Health> {
    Json(Health {
        status: "ok".into(),
        items: state.artifacts.len(),
    })
}

async fn query(State(state): State<AppState>, body: Bytes) -> Response {
    let start = Instant::now();
    let req: QueryRequest = match serde_json::from_slice(&body) {
        Ok(r) => r,
        Err(e) => return error(StatusCode::BAD_REQUEST, format!("invalid request body: {e}")),
    };
    let k = req.k.unwrap_or(DEFAULT_K);
    let artifacts = Arc::clone(&state.artifacts);
    let options = state.options;
    let outcome = tokio::task::spawn_blocking(move || answer_query_with(&artifacts, &req.text, k, &options)).await;
    match outcome {
        Ok(Ok(result)) => Json(QueryResponse {
            results: result.results,
            latency_ms: start.elapsed().as_secs_f64() * 1000.0,
        })
        .into_response(),
        Ok(Err(e)) if e.is_client_error() => error(StatusCode::BAD_REQUEST, e.to_string()),
        Ok(Err(e)) => {
            log::error!("query failed: {e}");
            error(StatusCode::INTERNAL_SERVER_ERROR, e.to_string())
        }
        Err(e) => {
            log::error!("query task failed: {e}");
            error(StatusCode::INTERNAL_SERVER_ERROR, "internal error")
        }
    }
}

pub fn router(artifacts: Arc<Artifacts>) -> Router {
    router_with(artifacts, QueryOptions::default())
}

pub fn router_with(artifacts: Arc<Artifacts>, options: QueryOptions) -> Router {
    Router::new()
        .route("/query", post(query))
        .route("/healthz", get(healthz))
        .with_state(AppState { artifacts, options })
}

/// Serves until `shutdown` resolves, then finishes in-flight requests.
pub async fn serve_until(listener: TcpListener, app: Router, shutdown: impl Future<Output = ()> + Send + 'static) -> std::io::Result<()> {
    axum::serve(listener, app).with_graceful_shutdown(shutdown).await
}

/// Binds `addr` and serves until Ctrl-C.
pub async fn serve(artifacts: Arc<Artifacts>, addr: SocketAddr, options: QueryOptions) -> std::io::Result<()> {
    let listener = TcpListener::bind(addr).await?;
    log::info!("listening on {}", listener.local_addr()?);
    serve_until(listener, router_with(artifacts, options), async {
        if tokio::signal::ctrl_c().await.is_ok() {
            log::info!("shutting down");
        }
    })
    .await
}
