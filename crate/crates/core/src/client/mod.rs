//! Paginated provider client with retry, rate limiting and record/replay.
//!
//! Live requests go through a [`Transport`]; replayed requests are answered
//! from a [`SnapshotStore`] and never reach a transport. Both paths share the
//! same pagination and decoding code, so a replayed retrieval is
//! byte-identical to the recorded one.

pub mod pacing;
pub mod transport;
pub mod wire;

use std::collections::HashSet;
use std::sync::atomic::{AtomicBool, AtomicU32, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use chrono::{DateTime, NaiveDate, Timelike, Utc};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::canonical::{canonical_value, to_canonical_string};
use crate::patent::normalize_patent_id;
use crate::query::{to_request, Combinator, CriterionValue, Op, Query, QueryError, QueryNode};
use crate::snapshot::{Snapshot, SnapshotStore, StoreError};
use crate::spectrum::CitationRecord;
use pacing::{backoff_delay, Clock, RateLimit, RateLimiter, SystemClock};
use transport::{HttpRequest, Transport, UreqTransport};

pub const DEFAULT_BASE_URL: &str = "https://api.patentsview.org/patents/query";
pub const API_KEY_ENV: &str = "PATENTSVIEW_API_KEY";
pub const BASE_URL_ENV: &str = "PATENTSVIEW_BASE_URL";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Party {
    pub name: String,
    pub country: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CitedRef {
    pub patent_id: String,
    pub grant_date: Option<NaiveDate>,
    pub title: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatentRecord {
    pub patent_id: String,
    pub title: String,
    pub grant_date: NaiveDate,
    pub inventors: Vec<Party>,
    pub assignees: Vec<Party>,
    pub cpc_subgroups: Vec<String>,
    pub cited: Vec<CitedRef>,
}

impl PatentRecord {
    pub fn cites(&self, patent_id: &str) -> bool {
        self.cited.iter().any(|c| c.patent_id == patent_id)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FetchPolicy {
    pub per_page: u32,
    /// `None` fetches until the provider's total is exhausted.
    pub max_pages: Option<u32>,
    pub max_concurrent_requests: usize,
    /// Total attempts per request, first try included.
    pub max_attempts: u32,
    pub backoff_base: Duration,
    pub backoff_max: Duration,
    pub rate_limit: RateLimit,
    pub timeout: Duration,
}

pub const MAX_ATTEMPTS_CEILING: u32 = 10;

impl Default for FetchPolicy {
    fn default() -> Self {
        FetchPolicy {
            per_page: 10_000,
            max_pages: None,
            max_concurrent_requests: 4,
            max_attempts: 5,
            backoff_base: Duration::from_millis(500),
            backoff_max: Duration::from_secs(30),
            // The provider allows 45 requests per minute per key.
            rate_limit: RateLimit {
                max_requests: 45,
                window: Duration::from_secs(60),
            },
            timeout: Duration::from_secs(60),
        }
    }
}

impl FetchPolicy {
    pub fn validate(&self) -> Result<(), ClientError> {
        let bad = |msg: &str| Err(ClientError::Policy(msg.to_string()));
        if self.per_page == 0 {
            return bad("per_page must be positive");
        }
        if self.max_pages == Some(0) {
            return bad("max_pages must be positive");
        }
        if self.max_concurrent_requests == 0 {
            return bad("max_concurrent_requests must be positive");
        }
        if self.max_attempts == 0 || self.max_attempts > MAX_ATTEMPTS_CEILING {
            return bad("max_attempts must be within 1..=10");
        }
        if self.rate_limit.max_requests == 0 || self.rate_limit.window.is_zero() {
            return bad("rate limit must admit at least one request per window");
        }
        if self.timeout.is_zero() {
            return bad("timeout must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub request_hash: String,
    pub endpoint: String,
    pub timestamp: DateTime<Utc>,
    pub page_count: u32,
    pub provider_total: u64,
    pub records_received: u64,
    /// Stopped at `max_pages` before the provider's total was exhausted.
    pub truncated: bool,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RetrievalResult {
    pub patents: Vec<PatentRecord>,
    pub citations: Vec<CitationRecord>,
    pub provenance: Provenance,
}

impl RetrievalResult {
    pub fn to_canonical_json(&self) -> String {
        to_canonical_string(self).expect("retrieval serializes")
    }

    /// SHA-256 of the canonical serialization.
    pub fn digest(&self) -> String {
        hex::encode(Sha256::digest(self.to_canonical_json().as_bytes()))
    }
}

/// A retrieval plus the exact provider responses it was built from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Retrieval {
    /// Canonical request body of page 1; its hash is the snapshot id.
    pub request_body: String,
    pub pages: Vec<String>,
    pub result: RetrievalResult,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Progress {
    pub pages_fetched: u32,
    pub total_pages: u32,
}

#[derive(Debug, Error)]
pub enum ClientError {
    #[error("provider rejected the query (HTTP {status}): {message}")]
    QueryRejected { status: u16, message: String },
    #[error(transparent)]
    InvalidQuery(#[from] QueryError),
    #[error("transport failure after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("undecodable provider response on page {page}: {message}")]
    Decode { page: u32, message: String },
    #[error("patent {0} is unknown to the provider")]
    NotFound(String),
    #[error("no recorded response: {0}")]
    CacheMiss(String),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("invalid fetch policy: {0}")]
    Policy(String),
}

/// One `(citing, cited)` edge per distinct pair, in record order.
pub fn derive_citations(patents: &[PatentRecord]) -> Vec<CitationRecord> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for patent in patents {
        for cited in &patent.cited {
            if cited.patent_id == patent.patent_id {
                continue;
            }
            if seen.insert((patent.patent_id.as_str(), cited.patent_id.as_str())) {
                out.push(CitationRecord {
                    citing_id: patent.patent_id.clone(),
                    cited_id: cited.patent_id.clone(),
                    cited_grant_year: cited.grant_date.map(|d| chrono::Datelike::year(&d)),
                });
            }
        }
    }
    out
}

/// Cache key shared by every page of one query: the request body with its
/// pagination options removed.
pub fn query_key(request_body: &str) -> Result<String, ClientError> {
    let mut value: Value = serde_json::from_str(request_body)
        .map_err(|e| ClientError::CacheMiss(format!("unreadable request body: {e}")))?;
    if let Value::Object(map) = &mut value {
        map.remove("o");
    }
    Ok(canonical_value(&value))
}

fn per_page_of(request_body: &str) -> Option<u32> {
    let value: Value = serde_json::from_str(request_body).ok()?;
    value["o"]["per_page"].as_u64().and_then(|n| u32::try_from(n).ok())
}

/// Snapshots that can answer requests in replay mode.
#[derive(Debug, Clone)]
pub struct ReplaySource {
    store: SnapshotStore,
    only: Option<String>,
}

impl ReplaySource {
    /// Any snapshot in `store` whose query matches.
    pub fn store(store: SnapshotStore) -> Self {
        ReplaySource { store, only: None }
    }

    /// Exactly one snapshot (id or unique prefix).
    pub fn snapshot(store: SnapshotStore, id: &str) -> Result<Self, ClientError> {
        let id = store.resolve(id)?;
        Ok(ReplaySource {
            store,
            only: Some(id),
        })
    }

    pub fn find(&self, request_body: &str) -> Result<Snapshot, ClientError> {
        let key = query_key(request_body)?;
        match &self.only {
            Some(id) => {
                let snapshot = self.store.get(id)?;
                if query_key(&snapshot.query_text)? != key {
                    return Err(ClientError::CacheMiss(format!(
                        "snapshot {id} was recorded for a different query"
                    )));
                }
                Ok(snapshot)
            }
            None => {
                for summary in self.store.list()? {
                    if query_key(&summary.query_text).ok().as_deref() == Some(key.as_str()) {
                        return Ok(self.store.get(&summary.id)?);
                    }
                }
                Err(ClientError::CacheMiss(format!(
                    "no snapshot in {} matches this query",
                    self.store.root().display()
                )))
            }
        }
    }
}

pub enum Source {
    Live,
    Replay(ReplaySource),
}

trait PageSource: Sync {
    fn page(&self, page: u32) -> Result<String, ClientError>;
}

struct LivePages<'a> {
    client: &'a PatentsViewClient,
    query: &'a Query,
    per_page: u32,
}

impl PageSource for LivePages<'_> {
    fn page(&self, page: u32) -> Result<String, ClientError> {
        let body = to_request(self.query, page, self.per_page)?;
        self.client.send(&body)
    }
}

struct ReplayPages<'a> {
    snapshot: &'a Snapshot,
}

impl PageSource for ReplayPages<'_> {
    fn page(&self, page: u32) -> Result<String, ClientError> {
        self.snapshot
            .pages
            .get(page as usize - 1)
            .cloned()
            .ok_or_else(|| {
                ClientError::CacheMiss(format!(
                    "page {page} was not recorded in snapshot {}",
                    self.snapshot.id
                ))
            })
    }
}

struct Paged {
    pages: Vec<String>,
    records: Vec<PatentRecord>,
    total: u64,
    truncated: bool,
    warnings: Vec<String>,
}

pub struct PatentsViewClient {
    transport: Arc<dyn Transport>,
    base_url: String,
    api_key: Option<String>,
    policy: FetchPolicy,
    clock: Arc<dyn Clock>,
    limiter: RateLimiter,
    source: Source,
}

impl PatentsViewClient {
    /// Live client over HTTPS; base URL and API key come from the
    /// environment when set.
    pub fn from_env(policy: FetchPolicy) -> Result<Self, ClientError> {
        let mut client = Self::with_transport(Arc::new(UreqTransport::new()), policy)?;
        if let Ok(url) = std::env::var(BASE_URL_ENV) {
            if !url.trim().is_empty() {
                client.base_url = url.trim().to_string();
            }
        }
        client.api_key = std::env::var(API_KEY_ENV).ok().filter(|k| !k.trim().is_empty());
        Ok(client)
    }

    pub fn with_transport(transport: Arc<dyn Transport>, policy: FetchPolicy) -> Result<Self, ClientError> {
        policy.validate()?;
        Ok(PatentsViewClient {
            transport,
            base_url: DEFAULT_BASE_URL.to_string(),
            api_key: None,
            limiter: RateLimiter::new(policy.rate_limit),
            policy,
            clock: Arc::new(SystemClock::new()),
            source: Source::Live,
        })
    }

    pub fn with_clock(mut self, clock: Arc<dyn Clock>) -> Self {
        self.clock = clock;
        self
    }

    pub fn with_base_url(mut self, url: impl Into<String>) -> Self {
        self.base_url = url.into();
        self
    }

    pub fn with_api_key(mut self, key: impl Into<String>) -> Self {
        self.api_key = Some(key.into());
        self
    }

    /// Answer every request from recorded snapshots instead of the network.
    pub fn replaying(mut self, replay: ReplaySource) -> Self {
        self.source = Source::Replay(replay);
        self
    }

    /// Records the admission time of every request for inspection.
    pub fn with_rate_log(mut self) -> Self {
        self.limiter = RateLimiter::new(self.policy.rate_limit).with_log();
        self
    }

    pub fn rate_admissions(&self) -> Vec<Duration> {
        self.limiter.admissions()
    }

    pub fn policy(&self) -> &FetchPolicy {
        &self.policy
    }

    pub fn is_replay(&self) -> bool {
        matches!(self.source, Source::Replay(_))
    }

    pub fn fetch_patents(&self, query: &Query) -> Result<Retrieval, ClientError> {
        self.fetch_patents_with_progress(query, &|_| {})
    }

    pub fn fetch_patents_with_progress(
        &self,
        query: &Query,
        progress: &(dyn Fn(Progress) + Sync),
    ) -> Result<Retrieval, ClientError> {
        match &self.source {
            Source::Live => {
                let request_body = to_request(query, 1, self.policy.per_page)?;
                let pages = LivePages {
                    client: self,
                    query,
                    per_page: self.policy.per_page,
                };
                let paged = self.paginate(&pages, self.policy.per_page, self.policy.max_pages, progress)?;
                let timestamp = self.clock.wall().with_nanosecond(0).expect("zero nanos is valid");
                Ok(assemble(request_body, paged, self.base_url.clone(), timestamp))
            }
            Source::Replay(replay) => {
                let probe = to_request(query, 1, self.policy.per_page)?;
                let snapshot = replay.find(&probe)?;
                let corrupt = |detail: String| {
                    ClientError::Store(StoreError::Corrupt {
                        id: snapshot.id.clone(),
                        detail,
                    })
                };
                let per_page = per_page_of(&snapshot.query_text)
                    .ok_or_else(|| corrupt("request body lacks o.per_page".into()))?;
                let recorded: RetrievalResult = serde_json::from_str(&snapshot.normalized)
                    .map_err(|e| corrupt(format!("normalized.json: {e}")))?;
                let max_pages = Some(snapshot.pages.len().max(1) as u32);
                let paged = self.paginate(&ReplayPages { snapshot: &snapshot }, per_page, max_pages, progress)?;
                Ok(assemble(
                    snapshot.query_text.clone(),
                    paged,
                    recorded.provenance.endpoint,
                    recorded.provenance.timestamp,
                ))
            }
        }
    }

    /// Every patent citing `patent_id`, with inventor countries and grant
    /// dates as delivered by the provider.
    pub fn fetch_forward_citations(&self, patent_id: &str) -> Result<Vec<PatentRecord>, ClientError> {
        let id = normalize_patent_id(patent_id);
        let retrieval = self.fetch_patents(&forward_citation_query(&id))?;
        citers_of(&retrieval.result, &id)
    }

    fn paginate(
        &self,
        source: &dyn PageSource,
        per_page: u32,
        max_pages: Option<u32>,
        progress: &(dyn Fn(Progress) + Sync),
    ) -> Result<Paged, ClientError> {
        let first_body = source.page(1)?;
        let first = wire::decode_page(&first_body).map_err(|message| ClientError::Decode { page: 1, message })?;
        let total = first.total;
        let total_pages = u32::try_from(total.div_ceil(per_page as u64).max(1)).unwrap_or(u32::MAX);
        let limit = max_pages.map_or(total_pages, |m| m.min(total_pages));
        progress(Progress {
            pages_fetched: 1,
            total_pages: limit,
        });

        let rest = self.fetch_remaining(source, limit, progress)?;

        let mut pages = Vec::with_capacity(limit as usize);
        let mut decoded = vec![first];
        pages.push(first_body);
        for (i, body) in rest.into_iter().enumerate() {
            let page = i as u32 + 2;
            decoded.push(wire::decode_page(&body).map_err(|message| ClientError::Decode { page, message })?);
            pages.push(body);
        }

        let mut warnings = Vec::new();
        let mut seen = HashSet::new();
        let mut records = Vec::new();
        for (i, page) in decoded.into_iter().enumerate() {
            for record in page.records {
                if seen.insert(record.patent_id.clone()) {
                    records.push(record);
                } else {
                    warnings.push(format!(
                        "patent {} repeated on page {}; kept the first occurrence",
                        record.patent_id,
                        i + 1
                    ));
                }
            }
        }
        let truncated = limit < total_pages;
        if !truncated && records.len() as u64 != total {
            warnings.push(format!(
                "provider reported {total} records but {} were received",
                records.len()
            ));
        }
        Ok(Paged {
            pages,
            records,
            total,
            truncated,
            warnings,
        })
    }

    /// Pages `2..=last` with at most `max_concurrent_requests` in flight,
    /// returned in page order.
    fn fetch_remaining(
        &self,
        source: &dyn PageSource,
        last: u32,
        progress: &(dyn Fn(Progress) + Sync),
    ) -> Result<Vec<String>, ClientError> {
        if last < 2 {
            return Ok(Vec::new());
        }
        let count = (last - 1) as usize;
        let slots: Mutex<Vec<Option<Result<String, ClientError>>>> =
            Mutex::new((0..count).map(|_| None).collect());
        let next = AtomicU32::new(2);
        let done = AtomicU32::new(1);
        let failed = AtomicBool::new(false);
        let workers = self.policy.max_concurrent_requests.min(count);

        std::thread::scope(|scope| {
            for _ in 0..workers {
                scope.spawn(|| loop {
                    if failed.load(Ordering::SeqCst) {
                        break;
                    }
                    let page = next.fetch_add(1, Ordering::SeqCst);
                    if page > last {
                        break;
                    }
                    let outcome = source.page(page);
                    if outcome.is_err() {
                        failed.store(true, Ordering::SeqCst);
                    }
                    slots.lock().expect("page slots")[(page - 2) as usize] = Some(outcome);
                    let fetched = done.fetch_add(1, Ordering::SeqCst) + 1;
                    progress(Progress {
                        pages_fetched: fetched,
                        total_pages: last,
                    });
                });
            }
        });

        let mut out = Vec::with_capacity(count);
        for slot in slots.into_inner().expect("page slots") {
            match slot {
                Some(Ok(body)) => out.push(body),
                Some(Err(err)) => return Err(err),
                // Skipped after another page failed; that error surfaces first.
                None => continue,
            }
        }
        Ok(out)
    }

    fn send(&self, body: &str) -> Result<String, ClientError> {
        let mut rng = rand::rng();
        let mut last_error = String::new();
        for attempt in 1..=self.policy.max_attempts {
            self.limiter.acquire(self.clock.as_ref());
            let request = HttpRequest {
                url: &self.base_url,
                body,
                api_key: self.api_key.as_deref(),
                timeout: self.policy.timeout,
            };
            match self.transport.post(&request) {
                Ok(resp) if (200..300).contains(&resp.status) => return Ok(resp.body),
                Ok(resp) if resp.status == 429 || resp.status >= 500 => {
                    last_error = format!("HTTP {}: {}", resp.status, provider_message(&resp.body, resp.status));
                }
                Ok(resp) => {
                    return Err(ClientError::QueryRejected {
                        status: resp.status,
                        message: provider_message(&resp.body, resp.status),
                    })
                }
                Err(failure) => last_error = failure.to_string(),
            }
            if attempt < self.policy.max_attempts {
                let delay = backoff_delay(attempt, self.policy.backoff_base, self.policy.backoff_max, &mut rng);
                self.clock.sleep(delay);
            }
        }
        Err(ClientError::Transport {
            attempts: self.policy.max_attempts,
            message: last_error,
        })
    }
}

fn assemble(request_body: String, paged: Paged, endpoint: String, timestamp: DateTime<Utc>) -> Retrieval {
    let citations = derive_citations(&paged.records);
    let provenance = Provenance {
        request_hash: crate::snapshot::content_id(&request_body),
        endpoint,
        timestamp,
        page_count: paged.pages.len() as u32,
        provider_total: paged.total,
        records_received: paged.records.len() as u64,
        truncated: paged.truncated,
        warnings: paged.warnings,
    };
    Retrieval {
        request_body,
        pages: paged.pages,
        result: RetrievalResult {
            patents: paged.records,
            citations,
            provenance,
        },
    }
}

fn provider_message(body: &str, status: u16) -> String {
    if let Ok(value) = serde_json::from_str::<Value>(body) {
        for key in ["error", "message", "detail"] {
            if let Some(text) = value.get(key).and_then(Value::as_str) {
                return text.to_string();
            }
        }
    }
    let trimmed = body.trim();
    if trimmed.is_empty() {
        format!("HTTP {status}")
    } else {
        trimmed.chars().take(300).collect()
    }
}

/// Criteria returning the patent itself plus every patent citing it.
pub fn forward_citation_query(patent_id: &str) -> Query {
    let id = CriterionValue::Str(normalize_patent_id(patent_id));
    Query::Advanced(QueryNode::Branch {
        combinator: Combinator::Or,
        children: vec![
            QueryNode::leaf("patent_number", Op::Eq, id.clone()),
            QueryNode::leaf("cited_patent_number", Op::Eq, id),
        ],
    })
}

/// Records of `result` that cite `patent_id`. Unknown when the retrieval
/// holds neither the patent nor any citer.
pub fn citers_of(result: &RetrievalResult, patent_id: &str) -> Result<Vec<PatentRecord>, ClientError> {
    let id = normalize_patent_id(patent_id);
    let known = result.patents.iter().any(|p| p.patent_id == id);
    let citers: Vec<PatentRecord> = result
        .patents
        .iter()
        .filter(|p| p.patent_id != id && p.cites(&id))
        .cloned()
        .collect();
    if !known && citers.is_empty() {
        return Err(ClientError::NotFound(id));
    }
    Ok(citers)
}

/// Persists the raw pages and the normalized result of `retrieval`.
pub fn record_snapshot(retrieval: &Retrieval, store: &SnapshotStore) -> Result<String, ClientError> {
    let snapshot = Snapshot::new(
        retrieval.request_body.clone(),
        retrieval.result.provenance.timestamp,
        retrieval.pages.clone(),
        retrieval.result.to_canonical_json(),
    );
    Ok(store.put(&snapshot)?)
}
