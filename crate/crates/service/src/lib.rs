//! HTTP facade over the spectrum, seminal-patent and diffusion computations.
//!
//! All responses are canonical JSON, so replayed answers are byte-stable.
//! Errors share one body shape: `{"code", "message", "detail"}`.

use std::convert::Infallible;
use std::path::PathBuf;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::rejection::QueryRejection;
use axum::extract::{Path, Query as UrlQuery, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::sse::{Event, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::Router;
use futures::stream::{self, Stream};
use pcs_core::canonical::canonical_value;
use pcs_core::client::{citers_of, forward_citation_query, record_snapshot, ClientError, Progress, ReplaySource};
use pcs_core::patent::normalize_patent_id;
use pcs_core::query::{parse_advanced, parse_advanced_value, parse_keyword, parse_query_string, QueryError};
use pcs_core::report::{analyze, diffusion_report, to_json};
use pcs_core::snapshot::StoreError;
use pcs_core::spectrum::DEFAULT_RUNNER_UPS;
use pcs_core::{build_profile, PatentsViewClient, Query, RetrievalResult, SnapshotStore};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tower_http::cors::CorsLayer;
use tower_http::services::ServeDir;

pub const DEFAULT_YEAR_LIMIT: usize = 10;
pub const MAX_YEAR_LIMIT: usize = 1000;

#[derive(Debug, Clone, Serialize)]
pub struct ApiError {
    #[serde(skip)]
    pub status: StatusCode,
    /// One of `query_rejected`, `transport`, `no_signal`, `not_found`, `internal`.
    pub code: &'static str,
    pub message: String,
    pub detail: Option<Value>,
}

impl ApiError {
    fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        ApiError {
            status,
            code,
            message: message.into(),
            detail: None,
        }
    }

    pub fn query_rejected(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "query_rejected", message)
    }

    pub fn not_found(message: impl Into<String>) -> Self {
        Self::new(StatusCode::NOT_FOUND, "not_found", message)
    }

    pub fn transport(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_GATEWAY, "transport", message)
    }

    pub fn internal(message: impl Into<String>) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", message)
    }

    fn with_detail(mut self, detail: Value) -> Self {
        self.detail = Some(detail);
        self
    }

    pub fn body(&self) -> String {
        canonical_value(&serde_json::to_value(self).expect("error serializes"))
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, [(header::CONTENT_TYPE, "application/json")], self.body()).into_response()
    }
}

impl From<QueryRejection> for ApiError {
    fn from(e: QueryRejection) -> Self {
        ApiError::query_rejected(e.body_text())
    }
}

impl From<QueryError> for ApiError {
    fn from(e: QueryError) -> Self {
        ApiError::query_rejected(format!("invalid query: {e}"))
    }
}

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> Self {
        match e {
            StoreError::CacheMiss { .. } => ApiError::not_found(e.to_string()),
            StoreError::Ambiguous { .. } => ApiError::query_rejected(e.to_string()),
            _ => ApiError::internal(e.to_string()),
        }
    }
}

impl From<ClientError> for ApiError {
    fn from(e: ClientError) -> Self {
        match e {
            ClientError::QueryRejected { status, .. } => {
                ApiError::query_rejected(e.to_string()).with_detail(json!({ "provider_status": status }))
            }
            ClientError::InvalidQuery(q) => q.into(),
            ClientError::Transport { attempts, .. } => {
                ApiError::transport(e.to_string()).with_detail(json!({ "attempts": attempts }))
            }
            ClientError::Decode { page, .. } => ApiError::transport(e.to_string()).with_detail(json!({ "page": page })),
            ClientError::NotFound(_) | ClientError::CacheMiss(_) => ApiError::not_found(e.to_string()),
            ClientError::Store(s) => s.into(),
            ClientError::Policy(_) => ApiError::internal(e.to_string()),
        }
    }
}

/// Shared by every request. The live client is shared so that its rate
/// limiter covers all concurrent live fetches.
pub struct AppState {
    store: SnapshotStore,
    live: PatentsViewClient,
}

impl AppState {
    pub fn new(store: SnapshotStore, live: PatentsViewClient) -> Self {
        AppState { store, live }
    }

    fn replay_client(&self, snapshot: Option<&str>) -> Result<PatentsViewClient, ApiError> {
        let replay = match snapshot {
            Some(id) => ReplaySource::snapshot(self.store.clone(), id)?,
            None => ReplaySource::store(self.store.clone()),
        };
        Ok(PatentsViewClient::from_env(self.live.policy().clone())?.replaying(replay))
    }

    /// Retrieves `query` from the chosen source. Live retrievals are
    /// recorded so that later replays and drill-downs can find them.
    fn retrieve(
        &self,
        query: &Query,
        source: &SourceParams,
        progress: &(dyn Fn(Progress) + Sync),
    ) -> Result<RetrievalResult, ApiError> {
        match source.source.unwrap_or_default() {
            SourceKind::Live => {
                let retrieval = self.live.fetch_patents_with_progress(query, progress)?;
                record_snapshot(&retrieval, &self.store)?;
                Ok(retrieval.result)
            }
            SourceKind::Replay => {
                let client = self.replay_client(source.snapshot.as_deref())?;
                Ok(client.fetch_patents_with_progress(query, progress)?.result)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, Default, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "lowercase")]
pub enum SourceKind {
    Live,
    #[default]
    Replay,
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(rename_all = "lowercase")]
enum Mode {
    Keyword,
    Advanced,
}

#[derive(Debug, Clone, Default, Deserialize)]
pub struct SourceParams {
    source: Option<SourceKind>,
    snapshot: Option<String>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SpectrumRequest {
    /// Search-box text, or advanced criteria as a JSON object.
    query: Value,
    mode: Option<Mode>,
    source: Option<SourceKind>,
    snapshot: Option<String>,
    top_k: Option<usize>,
}

struct SpectrumJob {
    query: Query,
    source: SourceParams,
    top_k: usize,
}

fn spectrum_job(body: &[u8]) -> Result<SpectrumJob, ApiError> {
    let request: SpectrumRequest =
        serde_json::from_slice(body).map_err(|e| ApiError::query_rejected(format!("invalid request body: {e}")))?;
    let query = match (&request.query, request.mode) {
        (Value::String(text), None) => parse_query_string(text)?,
        (Value::String(text), Some(Mode::Keyword)) => parse_keyword(text)?,
        (Value::String(text), Some(Mode::Advanced)) => parse_advanced(text)?,
        (Value::Object(_), None | Some(Mode::Advanced)) => parse_advanced_value(&request.query)?,
        _ => return Err(ApiError::query_rejected("query must be a string or an advanced criteria object")),
    };
    Ok(SpectrumJob {
        query,
        source: SourceParams {
            source: request.source,
            snapshot: request.snapshot,
        },
        top_k: request.top_k.unwrap_or(DEFAULT_RUNNER_UPS),
    })
}

/// The spectrum report plus `query_hash`, the id of the snapshot the
/// answer came from.
fn run_spectrum(state: &AppState, job: &SpectrumJob, progress: &(dyn Fn(Progress) + Sync)) -> Result<String, ApiError> {
    let result = state.retrieve(&job.query, &job.source, progress)?;
    let analysis = analyze(&result, job.top_k).map_err(|e| ApiError::internal(e.to_string()))?;
    let mut body = serde_json::to_value(analysis.spectrum_report()).map_err(|e| ApiError::internal(e.to_string()))?;
    body["query_hash"] = Value::String(result.provenance.request_hash.clone());
    Ok(canonical_value(&body))
}

fn json_response(body: String) -> Response {
    ([(header::CONTENT_TYPE, "application/json")], body).into_response()
}

async fn blocking<F>(work: F) -> Response
where
    F: FnOnce() -> Result<String, ApiError> + Send + 'static,
{
    match tokio::task::spawn_blocking(work).await {
        Ok(Ok(body)) => json_response(body),
        Ok(Err(e)) => e.into_response(),
        Err(e) => ApiError::internal(format!("request task failed: {e}")).into_response(),
    }
}

fn wants_events(headers: &HeaderMap) -> bool {
    headers
        .get(header::ACCEPT)
        .and_then(|v| v.to_str().ok())
        .is_some_and(|v| v.contains("text/event-stream"))
}

async fn spectrum(State(state): State<Arc<AppState>>, headers: HeaderMap, body: Bytes) -> Response {
    let job = match spectrum_job(&body) {
        Ok(job) => job,
        Err(e) => return e.into_response(),
    };
    if wants_events(&headers) {
        return spectrum_events(state, job).into_response();
    }
    blocking(move || run_spectrum(&state, &job, &|_| {})).await
}

/// `progress` events carry `{pages_fetched, total_pages}`; the stream ends
/// with one `result` event holding the report, or one `error` event.
fn spectrum_events(state: Arc<AppState>, job: SpectrumJob) -> Sse<impl Stream<Item = Result<Event, Infallible>>> {
    let (tx, rx) = tokio::sync::mpsc::unbounded_channel::<Event>();
    tokio::task::spawn_blocking(move || {
        let progress_tx = tx.clone();
        let outcome = run_spectrum(&state, &job, &move |p: Progress| {
            let data = canonical_value(&serde_json::to_value(p).expect("progress serializes"));
            let _ = progress_tx.send(Event::default().event("progress").data(data));
        });
        let last = match outcome {
            Ok(body) => Event::default().event("result").data(body),
            Err(e) => Event::default().event("error").data(e.body()),
        };
        let _ = tx.send(last);
    });
    Sse::new(stream::unfold(rx, |mut rx| async move { rx.recv().await.map(|event| (Ok(event), rx)) }))
}

async fn diffusion(
    State(state): State<Arc<AppState>>,
    Path(raw): Path<String>,
    source: Result<UrlQuery<SourceParams>, QueryRejection>,
) -> Response {
    blocking(move || {
        let UrlQuery(source) = source?;
        let id = normalize_patent_id(&raw);
        if id.is_empty() {
            return Err(ApiError::query_rejected(format!("`{raw}` is not a patent number")));
        }
        let result = state.retrieve(&forward_citation_query(&id), &source, &|_| {})?;
        let citers = citers_of(&result, &id)?;
        let profile = build_profile(&id, &citers).map_err(|e| ApiError::internal(e.to_string()))?;
        Ok(to_json(&diffusion_report(profile, &result)))
    })
    .await
}

#[derive(Debug, Deserialize)]
struct YearParams {
    query_hash: Option<String>,
    limit: Option<usize>,
}

async fn year_top(
    State(state): State<Arc<AppState>>,
    Path(raw_year): Path<String>,
    params: Result<UrlQuery<YearParams>, QueryRejection>,
) -> Response {
    blocking(move || {
        let UrlQuery(params) = params?;
        let year: i32 = raw_year
            .parse()
            .map_err(|_| ApiError::query_rejected(format!("`{raw_year}` is not a year")))?;
        let hash = params
            .query_hash
            .ok_or_else(|| ApiError::query_rejected("query_hash is required"))?;
        let limit = params.limit.unwrap_or(DEFAULT_YEAR_LIMIT).min(MAX_YEAR_LIMIT);
        let id = state.store.resolve(&hash)?;
        let snapshot = state.store.get(&id)?;
        let result: RetrievalResult = serde_json::from_str(&snapshot.normalized).map_err(|e| {
            ApiError::from(StoreError::Corrupt {
                id: id.clone(),
                detail: format!("normalized.json: {e}"),
            })
        })?;
        let analysis = analyze(&result, DEFAULT_RUNNER_UPS).map_err(|e| ApiError::internal(e.to_string()))?;
        let c_total: u64 = analysis.table.year(year).map_or(0, |b| b.values().sum());
        let body = json!({
            "query_hash": id,
            "year": year,
            "c_total": c_total,
            "patents": analysis.year_top(year, &result.patents, limit),
        });
        Ok(canonical_value(&body))
    })
    .await
}

async fn health() -> Response {
    json_response(canonical_value(&json!({
        "status": "ok",
        "service": env!("CARGO_PKG_NAME"),
        "version": env!("CARGO_PKG_VERSION"),
    })))
}

async fn unknown_endpoint() -> Response {
    ApiError::not_found("no such endpoint").into_response()
}

/// API routes under `/api`, plus the explorer's built assets at `/` when
/// `assets` is given.
pub fn router(state: Arc<AppState>, assets: Option<PathBuf>) -> Router {
    let api = Router::new()
        .route("/spectrum", post(spectrum))
        .route("/patents/{id}/diffusion", get(diffusion))
        .route("/years/{year}/top", get(year_top))
        .route("/health", get(health))
        .fallback(unknown_endpoint)
        .with_state(state);
    let app = Router::new().nest("/api", api);
    let app = match assets {
        Some(dir) => app.fallback_service(ServeDir::new(dir)),
        None => app.fallback(unknown_endpoint),
    };
    app.layer(CorsLayer::permissive())
}
