//! JSON over HTTP. Every handler runs the blocking service call on the
//! blocking thread pool.

use std::net::SocketAddr;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, Request, State};
use axum::http::{header, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use fmea_bn::{InferenceError, NetworkError};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::error::ServiceError;
use crate::records::EvidenceAction;
use crate::service::{CompileRequest, NetworkView, Service, SessionRequest};

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        let status = match &self {
            ServiceError::NotFound { .. } => StatusCode::NOT_FOUND,
            ServiceError::Conflict(_)
            | ServiceError::Inference(InferenceError::ConflictingEvidence { .. }) => {
                StatusCode::CONFLICT
            }
            ServiceError::Network(_)
            | ServiceError::Compile(_)
            | ServiceError::Inference(_)
            | ServiceError::Invalid(_) => StatusCode::UNPROCESSABLE_ENTITY,
            ServiceError::Storage(_) | ServiceError::Corrupt { .. } | ServiceError::Cells(_) => {
                StatusCode::INTERNAL_SERVER_ERROR
            }
        };
        if status.is_server_error() {
            log::error!("{self}");
        }
        let mut body = json!({"error": self.code(), "message": self.to_string()});
        if let ServiceError::Network(NetworkError::Schema { line, column, .. }) = &self {
            body["line"] = json!(line);
            body["column"] = json!(column);
        }
        (status, Json(body)).into_response()
    }
}

type ApiResult<T> = Result<T, ServiceError>;

#[derive(Clone)]
struct AppState {
    service: Service,
    token: Option<Arc<str>>,
}

async fn blocking<T, F>(f: F) -> ApiResult<T>
where
    F: FnOnce() -> ApiResult<T> + Send + 'static,
    T: Send + 'static,
{
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ServiceError::Storage(std::io::Error::other(e.to_string())))?
}

/// Parses a JSON body; an empty body means `{}`.
fn parse_body<T: DeserializeOwned>(body: &[u8]) -> ApiResult<T> {
    let body = if body.iter().all(u8::is_ascii_whitespace) {
        b"{}".as_slice()
    } else {
        body
    };
    serde_json::from_slice(body).map_err(|e| ServiceError::Invalid(e.to_string()))
}

async fn require_token(State(state): State<AppState>, request: Request, next: Next) -> Response {
    if let Some(token) = &state.token {
        let presented = request
            .headers()
            .get(header::AUTHORIZATION)
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.strip_prefix("Bearer "));
        if presented != Some(token) {
            let body = json!({"error": "unauthorized", "message": "missing or wrong bearer token"});
            return (StatusCode::UNAUTHORIZED, Json(body)).into_response();
        }
    }
    next.run(request).await
}

async fn create_network(
    State(s): State<AppState>,
    body: Bytes,
) -> ApiResult<(StatusCode, Json<NetworkView>)> {
    let text = std::str::from_utf8(&body)
        .map_err(|e| ServiceError::Invalid(format!("body is not UTF-8: {e}")))?
        .to_string();
    let record = blocking(move || s.service.ingest(&text)).await?;
    Ok((StatusCode::CREATED, Json(NetworkView::from(&record))))
}

async fn list_networks(State(s): State<AppState>) -> ApiResult<Json<Vec<NetworkView>>> {
    Ok(Json(blocking(move || Ok(s.service.networks())).await?))
}

async fn get_network(
    State(s): State<AppState>,
    Path(id): Path<String>,
) -> ApiResult<Json<NetworkView>> {
    let record = blocking(move || s.service.network(&id)).await?;
    Ok(Json(NetworkView::from(&record)))
}

async fn get_inconsistencies(
    State(s): State<AppState>,
    Path(id): Path<String>,
) -> ApiResult<Response> {
    let report = blocking(move || s.service.audit(&id)).await?;
    Ok(Json(report).into_response())
}

async fn get_compiled(State(s): State<AppState>, Path(id): Path<String>) -> ApiResult<Response> {
    let compiled = blocking(move || s.service.compiled_network(&id)).await?;
    Ok(Json(&*compiled).into_response())
}

async fn create_recommendation(
    State(s): State<AppState>,
    Path(id): Path<String>,
    body: Bytes,
) -> ApiResult<Response> {
    let overrides: Option<serde_json::Value> = parse_body(&body)?;
    let job = blocking(move || {
        let config = s.service.ga_config(overrides)?;
        s.service.submit_recommendation(&id, config)
    })
    .await?;
    Ok((StatusCode::ACCEPTED, Json(job)).into_response())
}

async fn get_recommendation(
    State(s): State<AppState>,
    Path(id): Path<String>,
) -> ApiResult<Response> {
    let job = blocking(move || s.service.job(&id)).await?;
    Ok(Json(job).into_response())
}

async fn compile_network(
    State(s): State<AppState>,
    Path(id): Path<String>,
    body: Bytes,
) -> ApiResult<Response> {
    let request: CompileRequest = parse_body(&body)?;
    let record = blocking(move || s.service.compile(&id, &request)).await?;
    Ok(Json(NetworkView::from(&record)).into_response())
}

async fn create_session(State(s): State<AppState>, body: Bytes) -> ApiResult<Response> {
    let request: SessionRequest = parse_body(&body)?;
    let session = blocking(move || s.service.open_session(&request)).await?;
    Ok((StatusCode::CREATED, Json(session)).into_response())
}

async fn get_session(State(s): State<AppState>, Path(id): Path<String>) -> ApiResult<Response> {
    let session = blocking(move || s.service.session(&id)).await?;
    Ok(Json(session).into_response())
}

#[derive(Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
struct EvidenceBody {
    failure_id: String,
    action: EvidenceAction,
}

async fn post_evidence(
    State(s): State<AppState>,
    Path(id): Path<String>,
    body: Bytes,
) -> ApiResult<Response> {
    let body: EvidenceBody = parse_body(&body)?;
    let report =
        blocking(move || s.service.apply_evidence(&id, &body.failure_id, body.action)).await?;
    Ok(Json(report).into_response())
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct PrefillBody {
    cell_id: String,
}

async fn post_prefill(
    State(s): State<AppState>,
    Path(id): Path<String>,
    body: Bytes,
) -> ApiResult<Response> {
    let body: PrefillBody = parse_body(&body)?;
    let report = blocking(move || s.service.prefill(&id, &body.cell_id)).await?;
    Ok(Json(report).into_response())
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct RerollBody {
    seed: Option<u64>,
}

async fn post_reroll(
    State(s): State<AppState>,
    Path(id): Path<String>,
    body: Bytes,
) -> ApiResult<Response> {
    let body: RerollBody = parse_body(&body)?;
    let report = blocking(move || s.service.reroll(&id, body.seed)).await?;
    Ok(Json(report).into_response())
}

async fn get_rankings(State(s): State<AppState>, Path(id): Path<String>) -> ApiResult<Response> {
    let rankings = blocking(move || s.service.rankings(&id)).await?;
    Ok(Json(rankings).into_response())
}

async fn not_found() -> ServiceError {
    ServiceError::NotFound {
        kind: "route",
        id: String::new(),
    }
}

/// All routes; requests need `Authorization: Bearer <token>` when a token is
/// set.
pub fn router(service: Service, token: Option<String>) -> Router {
    let state = AppState {
        service,
        token: token.map(Arc::from),
    };
    Router::new()
        .route("/networks", post(create_network).get(list_networks))
        .route("/networks/{id}", get(get_network))
        .route("/networks/{id}/inconsistencies", get(get_inconsistencies))
        .route(
            "/networks/{id}/recommendations",
            post(create_recommendation),
        )
        .route("/networks/{id}/compile", post(compile_network))
        .route("/networks/{id}/compiled", get(get_compiled))
        .route("/recommendations/{job}", get(get_recommendation))
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", get(get_session))
        .route("/sessions/{id}/evidence", post(post_evidence))
        .route("/sessions/{id}/prefill", post(post_prefill))
        .route("/sessions/{id}/reroll", post(post_reroll))
        .route("/sessions/{id}/rankings", get(get_rankings))
        .fallback(not_found)
        .layer(middleware::from_fn_with_state(state.clone(), require_token))
        .with_state(state)
}

/// Serves until `shutdown` resolves.
pub async fn serve(
    listener: tokio::net::TcpListener,
    service: Service,
    token: Option<String>,
    shutdown: impl std::future::Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    let addr: Option<SocketAddr> = listener.local_addr().ok();
    if let Some(addr) = addr {
        log::info!("listening on http://{addr}");
    }
    axum::serve(listener, router(service, token))
        .with_graceful_shutdown(shutdown)
        .await
}
