//! `/v1` HTTP routes. Handlers only decode, delegate to [`Service`] and encode.

use std::collections::HashMap;
use std::sync::Arc;

use axum::extract::{FromRequest, FromRequestParts, Path, Query, Request, State};
use axum::http::header::AUTHORIZATION;
use axum::http::request::Parts;
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use mpe_core::catalog::{PinnedMatch, QueryFilter};
use mpe_core::eval::AnnotationRecord;
use serde::{Deserialize, Serialize};

use crate::error::{ApiError, ErrorCode};
use crate::service::{
    submit_batch_extract, submit_evaluate, BatchExtractRequest, EvaluateRequest, IngestRequest, OutfitRequest,
    OverrideRequest, Service, SimilarParams,
};

type Shared = Arc<Service>;
type ApiResult<T> = Result<Json<T>, ApiError>;

/// JSON body whose rejections are reported as [`ApiError`].
struct Body<T>(T);

impl<T: serde::de::DeserializeOwned, S: Send + Sync> FromRequest<S> for Body<T> {
    type Rejection = ApiError;

    async fn from_request(req: Request, state: &S) -> Result<Self, Self::Rejection> {
        Json::<T>::from_request(req, state)
            .await
            .map(|Json(v)| Body(v))
            .map_err(|e| ApiError::invalid(e.body_text()))
    }
}

/// Query string whose rejections are reported as [`ApiError`].
struct Params<T>(T);

impl<T: serde::de::DeserializeOwned, S: Send + Sync> FromRequestParts<S> for Params<T> {
    type Rejection = ApiError;

    async fn from_request_parts(parts: &mut Parts, state: &S) -> Result<Self, Self::Rejection> {
        Query::<T>::from_request_parts(parts, state)
            .await
            .map(|Query(v)| Params(v))
            .map_err(|e| ApiError::invalid(e.body_text()))
    }
}

pub fn router(service: Shared) -> Router {
    let v1 = Router::new()
        .route("/health", get(health))
        .route("/products", post(ingest).get(list_products))
        .route("/products/{id}", get(product))
        .route("/products/{id}/extract", post(extract))
        .route("/products/{id}/properties", get(properties).put(put_properties))
        .route("/products/{id}/properties/revisions", get(revisions))
        .route("/match/similar", get(similar))
        .route("/match/outfit", post(outfit))
        .route("/pins", get(pins).post(pin))
        .route("/annotations", post(put_annotations).get(annotations))
        .route("/evaluate", post(evaluate))
        .route("/extract", post(batch_extract))
        .route("/jobs/{id}", get(job))
        .layer(middleware::from_fn_with_state(service.clone(), require_token))
        .with_state(service);
    Router::new().nest("/v1", v1).fallback(|| async { ApiError::not_found("no such route") })
}

async fn require_token(State(s): State<Shared>, req: Request, next: Next) -> Response {
    if let Some(token) = &s.token {
        let ok = req
            .headers()
            .get(AUTHORIZATION)
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.strip_prefix("Bearer "))
            .is_some_and(|t| t == token);
        if !ok {
            let e = ApiError::new(ErrorCode::Invalid, "missing or wrong bearer token");
            return (axum::http::StatusCode::UNAUTHORIZED, Json(e)).into_response();
        }
    }
    next.run(req).await
}

/// Runs CPU-bound service calls off the async executor.
async fn blocking<T: Send + 'static>(
    f: impl FnOnce() -> Result<T, ApiError> + Send + 'static,
) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f).await.map_err(|e| ApiError::backend(format!("worker failed: {e}")))?
}

#[derive(Serialize)]
struct Health {
    status: &'static str,
    products: usize,
    backend: String,
}

async fn health(State(s): State<Shared>) -> Json<Health> {
    Json(Health { status: "ok", products: s.store.len(), backend: s.backends.default_name().to_string() })
}

async fn ingest(State(s): State<Shared>, Body(req): Body<IngestRequest>) -> ApiResult<mpe_core::catalog::IngestReport> {
    s.ingest(req).map(Json)
}

async fn list_products(State(s): State<Shared>, Params(filter): Params<QueryFilter>) -> Json<Vec<String>> {
    Json(s.list(&filter))
}

async fn product(State(s): State<Shared>, Path(id): Path<String>) -> ApiResult<mpe_core::catalog::ProductView> {
    s.product(&id).map(Json)
}

#[derive(Debug, Default, Deserialize)]
struct BackendParam {
    backend: Option<String>,
}

async fn extract(
    State(s): State<Shared>,
    Path(id): Path<String>,
    Params(q): Params<BackendParam>,
) -> ApiResult<mpe_core::pipeline::Extraction> {
    blocking(move || s.extract(&id, q.backend.as_deref())).await.map(Json)
}

async fn properties(State(s): State<Shared>, Path(id): Path<String>) -> ApiResult<mpe_core::properties::MaterialProperties> {
    s.properties(&id).map(Json)
}

async fn put_properties(
    State(s): State<Shared>,
    Path(id): Path<String>,
    Body(req): Body<OverrideRequest>,
) -> ApiResult<crate::service::OverrideResponse> {
    s.put_override(&id, req).map(Json)
}

async fn revisions(State(s): State<Shared>, Path(id): Path<String>) -> ApiResult<Vec<mpe_core::catalog::OverrideRevision>> {
    s.revisions(&id).map(Json)
}

async fn similar(
    State(s): State<Shared>,
    Params(q): Params<HashMap<String, String>>,
) -> ApiResult<Vec<mpe_core::matchmaker::Recommendation>> {
    let p = SimilarParams::from_query(&q)?;
    blocking(move || s.similar(&p)).await.map(Json)
}

async fn outfit(State(s): State<Shared>, Body(req): Body<OutfitRequest>) -> ApiResult<Vec<mpe_core::matchmaker::Recommendation>> {
    blocking(move || s.outfit(&req)).await.map(Json)
}

#[derive(Debug, Default, Deserialize)]
struct SourceParam {
    source: Option<String>,
}

async fn pins(State(s): State<Shared>, Params(q): Params<SourceParam>) -> Json<Vec<PinnedMatch>> {
    Json(s.pins(q.source.as_deref()))
}

async fn pin(State(s): State<Shared>, Body(p): Body<PinnedMatch>) -> ApiResult<crate::service::OverrideResponse> {
    s.pin(p).map(Json)
}

async fn put_annotations(State(s): State<Shared>, Body(records): Body<Vec<AnnotationRecord>>) -> ApiResult<crate::service::Stored> {
    s.put_annotations(records).map(Json)
}

async fn annotations(State(s): State<Shared>) -> Json<Vec<AnnotationRecord>> {
    Json(s.annotations())
}

async fn evaluate(State(s): State<Shared>, Body(req): Body<EvaluateRequest>) -> Response {
    match submit_evaluate(&s, req) {
        Ok(accepted) => (axum::http::StatusCode::ACCEPTED, Json(accepted)).into_response(),
        Err(e) => e.into_response(),
    }
}

async fn batch_extract(State(s): State<Shared>, Body(req): Body<BatchExtractRequest>) -> Response {
    match submit_batch_extract(&s, req) {
        Ok(accepted) => (axum::http::StatusCode::ACCEPTED, Json(accepted)).into_response(),
        Err(e) => e.into_response(),
    }
}

async fn job(State(s): State<Shared>, Path(id): Path<String>) -> ApiResult<crate::jobs::JobView> {
    s.jobs.get(&id).map(Json).ok_or_else(|| ApiError::not_found(format!("unknown job {id:?}")))
}
