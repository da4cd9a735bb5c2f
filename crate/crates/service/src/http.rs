//! HTTP/JSON routes. Errors are `{"error": {"code", "message"}}` with a
//! matching status.

use std::sync::Arc;

use apcg_core::corpus::TokenId;
use apcg_core::decode::EncodedSource;
use apcg_core::model::load_checkpoint;
use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::app::{DataDir, GenerateRequest, Service};
use crate::error::ServiceError;
use crate::events::EventRecord;
use crate::screening::Verdict;

#[derive(Clone)]
pub struct AppState {
    pub service: Arc<Service>,
    /// Where `/v1/admin/reload` reads the current checkpoint from.
    pub data: Option<DataDir>,
}

pub struct ApiError(pub ServiceError);

impl From<ServiceError> for ApiError {
    fn from(e: ServiceError) -> Self {
        Self(e)
    }
}

pub fn status_for(e: &ServiceError) -> StatusCode {
    match e {
        ServiceError::UnknownProduct(_) | ServiceError::NotFound(_) => StatusCode::NOT_FOUND,
        ServiceError::ModelUnavailable => StatusCode::SERVICE_UNAVAILABLE,
        ServiceError::AlreadyReviewed(_) | ServiceError::NotEligible(_) => StatusCode::CONFLICT,
        ServiceError::InvalidRequest(_)
        | ServiceError::Json(_)
        | ServiceError::NonMonotone(_)
        | ServiceError::CtrUndefined
        | ServiceError::CvrUndefined
        | ServiceError::Decode(_)
        | ServiceError::Model(_)
        | ServiceError::Corpus(_) => StatusCode::BAD_REQUEST,
        _ => StatusCode::INTERNAL_SERVER_ERROR,
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = json!({"error": {"code": self.0.code(), "message": self.0.to_string()}});
        (status_for(&self.0), Json(body)).into_response()
    }
}

type ApiResult<T> = Result<Json<T>, ApiError>;

fn parse<T: DeserializeOwned>(body: &Bytes) -> Result<T, ApiError> {
    serde_json::from_slice(body).map_err(|e| ApiError(ServiceError::InvalidRequest(e.to_string())))
}

async fn blocking<T, F>(f: F) -> Result<T, ApiError>
where
    F: FnOnce() -> Result<T, ServiceError> + Send + 'static,
    T: Send + 'static,
{
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError(ServiceError::Internal(e.to_string())))?
        .map_err(ApiError)
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/v1/generate", post(generate))
        .route("/v1/descriptions/{sku}", get(description))
        .route("/v1/screening/pending", get(pending))
        .route("/v1/screening/{id}/submit", post(submit))
        .route("/v1/screening/{id}/verdict", post(verdict))
        .route("/v1/stats", get(stats))
        .route("/v1/events", post(events))
        .route("/v1/healthz", get(healthz))
        .route("/v1/predict/encode", post(predict_encode))
        .route("/v1/predict/decode", post(predict_decode))
        .route("/v1/admin/reload", post(reload))
        .with_state(state)
}

async fn generate(State(st): State<AppState>, body: Bytes) -> ApiResult<serde_json::Value> {
    let req: GenerateRequest = parse(&body)?;
    let artifact = blocking(move || st.service.generate(&req)).await?;
    Ok(Json(serde_json::to_value(artifact).map_err(|e| ApiError(e.into()))?))
}

async fn description(State(st): State<AppState>, Path(sku): Path<String>) -> ApiResult<serde_json::Value> {
    let a = st
        .service
        .description(&sku)
        .ok_or_else(|| ApiError(ServiceError::NotFound(format!("no approved description for {sku}"))))?;
    Ok(Json(serde_json::to_value(a).map_err(|e| ApiError(e.into()))?))
}

#[derive(Deserialize)]
struct PendingQuery {
    limit: Option<usize>,
}

async fn pending(State(st): State<AppState>, Query(q): Query<PendingQuery>) -> ApiResult<serde_json::Value> {
    let items = st.service.pending(q.limit.unwrap_or(50));
    Ok(Json(json!({ "items": items })))
}

async fn submit(State(st): State<AppState>, Path(id): Path<String>) -> ApiResult<serde_json::Value> {
    let position = st.service.submit(&id)?;
    Ok(Json(json!({ "position": position })))
}

#[derive(Serialize, Deserialize)]
pub struct VerdictBody {
    pub verdict: Verdict,
    #[serde(default)]
    pub edited_text: Option<String>,
}

async fn verdict(State(st): State<AppState>, Path(id): Path<String>, body: Bytes) -> ApiResult<serde_json::Value> {
    let v: VerdictBody = parse(&body)?;
    let out = blocking(move || st.service.review(&id, v.verdict, v.edited_text)).await?;
    Ok(Json(serde_json::to_value(out).map_err(|e| ApiError(e.into()))?))
}

async fn stats(State(st): State<AppState>) -> ApiResult<serde_json::Value> {
    Ok(Json(serde_json::to_value(st.service.stats()).map_err(|e| ApiError(e.into()))?))
}

#[derive(Serialize, Deserialize)]
pub struct EventsBody {
    pub records: Vec<EventRecord>,
}

async fn events(State(st): State<AppState>, body: Bytes) -> ApiResult<serde_json::Value> {
    let b: EventsBody = parse(&body)?;
    let n = blocking(move || st.service.events().append(b.records)).await?;
    Ok(Json(json!({ "appended": n })))
}

async fn healthz(State(st): State<AppState>) -> ApiResult<serde_json::Value> {
    Ok(Json(serde_json::to_value(st.service.health()).map_err(|e| ApiError(e.into()))?))
}

#[derive(Serialize, Deserialize)]
pub struct EncodeBody {
    pub tokens: Vec<String>,
}

async fn predict_encode(State(st): State<AppState>, body: Bytes) -> ApiResult<EncodedSource> {
    let b: EncodeBody = parse(&body)?;
    Ok(Json(blocking(move || st.service.predict_encode(&b.tokens)).await?))
}

#[derive(Serialize, Deserialize)]
pub struct DecodeBody {
    pub encoded: EncodedSource,
    pub prefix: Vec<TokenId>,
    pub k: usize,
}

async fn predict_decode(State(st): State<AppState>, body: Bytes) -> ApiResult<serde_json::Value> {
    let b: DecodeBody = parse(&body)?;
    let c = blocking(move || st.service.predict_decode(&b.encoded, &b.prefix, b.k)).await?;
    Ok(Json(json!({ "candidates": c })))
}

async fn reload(State(st): State<AppState>) -> ApiResult<serde_json::Value> {
    let Some(dir) = st.data.clone() else {
        return Err(ApiError(ServiceError::InvalidRequest("service has no data directory".into())));
    };
    let version = blocking(move || {
        let model = load_checkpoint(&dir.model())?;
        Ok(st.service.swap_model(model))
    })
    .await?;
    Ok(Json(json!({ "model_version": version })))
}

/// Serves until ctrl-c.
pub async fn serve(state: AppState, listener: tokio::net::TcpListener) -> std::io::Result<()> {
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
