use std::sync::Arc;

use axum::body::{to_bytes, Body};
use axum::http::{header, Request, StatusCode};
use axum::Router;
use pcs_core::client::{citers_of, forward_citation_query, PatentRecord};
use pcs_core::report::{diffusion_report, to_json};
use pcs_core::testing::{manual_clock, record_fixture, synthetic_corpus, test_policy, CorpusSpec, FixtureTransport};
use pcs_core::{build_profile, parse_advanced, PatentsViewClient, Query, SnapshotStore};
use pcs_service::{router, AppState};
use serde_json::{json, Value};
use tempfile::TempDir;
use tower::ServiceExt;

const CPC: &str = "TEST02V001";
const PLANTED: &str = "7200002";
const PLANTED_YEAR: i32 = 1982;

fn criteria() -> Value {
    json!({ "cpc_subgroup_id": CPC })
}

fn query() -> Query {
    parse_advanced(&criteria().to_string()).unwrap()
}

fn corpus() -> Vec<PatentRecord> {
    synthetic_corpus(&CorpusSpec::new(11, CPC, 120).planted(PLANTED, PLANTED_YEAR, "Thin-film junction cell", 0.5))
}

struct Fixture {
    dir: TempDir,
    spectrum_id: String,
    transport: Arc<FixtureTransport>,
}

impl Fixture {
    fn store(&self) -> SnapshotStore {
        SnapshotStore::new(self.dir.path())
    }

    fn app(&self) -> Router {
        let live = PatentsViewClient::with_transport(self.transport.clone(), test_policy(50))
            .unwrap()
            .with_clock(manual_clock());
        router(Arc::new(AppState::new(self.store(), live)), None)
    }
}

/// Store holding the corpus query and the planted patent's forward citations.
fn fixture() -> Fixture {
    fixture_with(FixtureTransport::new(corpus()))
}

fn fixture_with(transport: FixtureTransport) -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let store = SnapshotStore::new(dir.path());
    let spectrum_id = record_fixture(&store, corpus(), &query(), 40);
    record_fixture(&store, corpus(), &forward_citation_query(PLANTED), 40);
    Fixture {
        dir,
        spectrum_id,
        transport: Arc::new(transport),
    }
}

fn empty_fixture(transport: FixtureTransport) -> Fixture {
    Fixture {
        dir: tempfile::tempdir().unwrap(),
        spectrum_id: String::new(),
        transport: Arc::new(transport),
    }
}

struct Reply {
    status: StatusCode,
    content_type: String,
    body: String,
}

impl Reply {
    fn json(&self) -> Value {
        serde_json::from_str(&self.body).unwrap_or_else(|e| panic!("{e}: {}", self.body))
    }

    fn assert_error(&self, status: StatusCode, code: &str) {
        assert_eq!(self.status, status, "{}", self.body);
        let body = self.json();
        assert_eq!(body["code"], code);
        assert!(!body["message"].as_str().unwrap().is_empty());
        let keys: Vec<&String> = body.as_object().unwrap().keys().collect();
        assert_eq!(keys, ["code", "detail", "message"]);
    }
}

async fn send(app: Router, request: Request<Body>) -> Reply {
    let response = app.oneshot(request).await.unwrap();
    let status = response.status();
    let content_type = response
        .headers()
        .get(header::CONTENT_TYPE)
        .map(|v| v.to_str().unwrap().to_string())
        .unwrap_or_default();
    let bytes = to_bytes(response.into_body(), usize::MAX).await.unwrap();
    Reply {
        status,
        content_type,
        body: String::from_utf8(bytes.to_vec()).unwrap(),
    }
}

async fn post_spectrum(app: Router, body: Value) -> Reply {
    post_raw(app, body.to_string()).await
}

async fn post_raw(app: Router, body: String) -> Reply {
    let request = Request::post("/api/spectrum")
        .header(header::CONTENT_TYPE, "application/json")
        .body(Body::from(body))
        .unwrap();
    send(app, request).await
}

async fn get(app: Router, uri: &str) -> Reply {
    send(app, Request::get(uri).body(Body::empty()).unwrap()).await
}

#[tokio::test]
async fn replayed_spectrum_names_the_planted_patent() {
    let f = fixture();
    let reply = post_spectrum(f.app(), json!({ "query": criteria(), "source": "replay" })).await;
    assert_eq!(reply.status, StatusCode::OK, "{}", reply.body);
    assert_eq!(reply.content_type, "application/json");
    let body = reply.json();
    assert_eq!(body["seminal"]["patent_id"], PLANTED);
    assert_eq!(body["seminal"]["peak_year"], PLANTED_YEAR);
    assert_eq!(body["no_signal"], false);
    assert_eq!(body["query_hash"], f.spectrum_id.as_str());
    assert_eq!(body["provenance"]["snapshot_id"], f.spectrum_id.as_str());
    assert!(body["provenance"]["edges_dropped_missing_year"].as_u64().unwrap() > 0);
    assert!(body["spectrum"]["points"].as_array().unwrap().len() > 10);
    assert_eq!(f.transport.calls(), 0);
}

#[tokio::test]
async fn query_forms_are_interchangeable() {
    let f = fixture();
    let text = criteria().to_string();
    let forms = [
        json!({ "query": criteria() }),
        json!({ "query": format!("ADVANCED={text}") }),
        json!({ "query": text, "mode": "advanced" }),
        json!({ "query": criteria(), "snapshot": &f.spectrum_id[..10] }),
    ];
    let mut bodies = Vec::new();
    for form in forms {
        let reply = post_spectrum(f.app(), form).await;
        assert_eq!(reply.status, StatusCode::OK, "{}", reply.body);
        bodies.push(reply.body);
    }
    assert!(bodies.windows(2).all(|w| w[0] == w[1]));
}

#[tokio::test]
async fn replay_responses_are_byte_identical_under_concurrency() {
    let f = fixture();
    let app = f.app();
    let requests = (0..8).map(|_| post_spectrum(app.clone(), json!({ "query": criteria() })));
    let replies = futures::future::join_all(requests).await;
    assert!(replies.iter().all(|r| r.status == StatusCode::OK));
    assert!(replies.windows(2).all(|w| w[0].body == w[1].body));
    let canonical = pcs_core::canonical::canonical_value(&replies[0].json());
    assert_eq!(replies[0].body, canonical);
}

#[tokio::test]
async fn malformed_requests_are_rejected() {
    let f = fixture();
    let cases = [
        json!({ "query": "   " }).to_string(),
        json!({ "query": "", "mode": "keyword" }).to_string(),
        json!({ "query": { "no_such_field": "x" } }).to_string(),
        json!({ "query": "ADVANCED={\"cpc_subgroup_id\":" }).to_string(),
        json!({ "query": 42 }).to_string(),
        json!({ "query": "solar", "extra": true }).to_string(),
        json!({ "query": "solar", "source": "cache" }).to_string(),
        "not json".to_string(),
    ];
    for case in cases {
        post_raw(f.app(), case).await.assert_error(StatusCode::BAD_REQUEST, "query_rejected");
    }
}

#[tokio::test]
async fn unrecorded_query_is_not_found() {
    let f = fixture();
    let reply = post_spectrum(f.app(), json!({ "query": "perovskite tandem" })).await;
    reply.assert_error(StatusCode::NOT_FOUND, "not_found");
    let reply = post_spectrum(f.app(), json!({ "query": criteria(), "snapshot": "ffffffffff" })).await;
    reply.assert_error(StatusCode::NOT_FOUND, "not_found");
}

#[tokio::test]
async fn all_zero_spectrum_is_a_marked_success() {
    let mut spec = CorpusSpec::new(3, "TEST02V009", 20);
    spec.refs_per_patent = 0;
    let f = empty_fixture(FixtureTransport::new(synthetic_corpus(&spec)));
    let reply = post_spectrum(f.app(), json!({ "query": { "cpc_subgroup_id": "TEST02V009" }, "source": "live" })).await;
    assert_eq!(reply.status, StatusCode::OK, "{}", reply.body);
    let body = reply.json();
    assert_eq!(body["no_signal"], true);
    assert_eq!(body["seminal"], Value::Null);
}

#[tokio::test]
async fn live_fetch_is_recorded_for_replay_and_drill_down() {
    let f = empty_fixture(FixtureTransport::new(corpus()));
    let live = post_spectrum(f.app(), json!({ "query": criteria(), "source": "live" })).await;
    assert_eq!(live.status, StatusCode::OK, "{}", live.body);
    let calls = f.transport.calls();
    assert!(calls >= 3, "{calls} calls");

    let replayed = post_spectrum(f.app(), json!({ "query": criteria(), "source": "replay" })).await;
    assert_eq!(replayed.body, live.body);
    assert_eq!(f.transport.calls(), calls);

    let hash = live.json()["query_hash"].as_str().unwrap().to_string();
    let top = get(f.app(), &format!("/api/years/{PLANTED_YEAR}/top?query_hash={hash}")).await;
    assert_eq!(top.status, StatusCode::OK);
    assert_eq!(top.json()["patents"][0]["patent_id"], PLANTED);
}

#[tokio::test]
async fn provider_failures_map_to_error_codes() {
    let f = empty_fixture(FixtureTransport::new(corpus()).failing_first(100, 503));
    let reply = post_spectrum(f.app(), json!({ "query": criteria(), "source": "live" })).await;
    reply.assert_error(StatusCode::BAD_GATEWAY, "transport");
    assert_eq!(reply.json()["detail"]["attempts"], 5);

    let f = empty_fixture(FixtureTransport::new(corpus()).failing_first(1, 400));
    let reply = post_spectrum(f.app(), json!({ "query": criteria(), "source": "live" })).await;
    reply.assert_error(StatusCode::BAD_REQUEST, "query_rejected");
    assert_eq!(reply.json()["detail"]["provider_status"], 400);
}

fn events(body: &str) -> Vec<(String, String)> {
    body.split("\n\n")
        .filter(|block| !block.trim().is_empty())
        .map(|block| {
            let mut name = String::new();
            let mut data = String::new();
            for line in block.lines() {
                if let Some(v) = line.strip_prefix("event:") {
                    name = v.trim().to_string();
                } else if let Some(v) = line.strip_prefix("data:") {
                    data.push_str(v.trim_start());
                }
            }
            (name, data)
        })
        .collect()
}

fn event_request(body: Value) -> Request<Body> {
    Request::post("/api/spectrum")
        .header(header::CONTENT_TYPE, "application/json")
        .header(header::ACCEPT, "text/event-stream")
        .body(Body::from(body.to_string()))
        .unwrap()
}

#[tokio::test]
async fn live_progress_streams_before_the_result() {
    let f = empty_fixture(FixtureTransport::new(corpus()));
    let reply = send(f.app(), event_request(json!({ "query": criteria(), "source": "live" }))).await;
    assert_eq!(reply.status, StatusCode::OK);
    assert!(reply.content_type.starts_with("text/event-stream"));
    let events = events(&reply.body);
    let (last, progress) = events.split_last().unwrap();
    assert_eq!(last.0, "result");
    let result: Value = serde_json::from_str(&last.1).unwrap();
    assert_eq!(result["seminal"]["patent_id"], PLANTED);

    assert_eq!(progress.len(), 3);
    for (name, data) in progress {
        assert_eq!(name, "progress");
        let p: Value = serde_json::from_str(data).unwrap();
        assert_eq!(p["total_pages"], 3);
        assert!(p["pages_fetched"].as_u64().unwrap() >= 1);
    }
    let fetched: Vec<u64> = progress
        .iter()
        .map(|(_, d)| serde_json::from_str::<Value>(d).unwrap()["pages_fetched"].as_u64().unwrap())
        .collect();
    assert_eq!(fetched.iter().max(), Some(&3));
}

#[tokio::test]
async fn streamed_failures_end_with_an_error_event() {
    let f = empty_fixture(FixtureTransport::new(corpus()).failing_first(100, 503));
    let reply = send(f.app(), event_request(json!({ "query": criteria(), "source": "live" }))).await;
    let events = events(&reply.body);
    let (name, data) = events.last().unwrap();
    assert_eq!(name, "error");
    let error: Value = serde_json::from_str(data).unwrap();
    assert_eq!(error["code"], "transport");

    let reply = send(f.app(), event_request(json!({ "query": "" }))).await;
    reply.assert_error(StatusCode::BAD_REQUEST, "query_rejected");
}

#[tokio::test]
async fn diffusion_matches_the_cli_serialization() {
    let f = fixture();
    let reply = get(f.app(), &format!("/api/patents/US{PLANTED}/diffusion")).await;
    assert_eq!(reply.status, StatusCode::OK, "{}", reply.body);

    let citers: Vec<PatentRecord> = corpus().into_iter().filter(|p| p.cites(PLANTED)).collect();
    let body = reply.json();
    assert_eq!(body["profile"]["citing_patents"], citers.len() as u64);

    let client = PatentsViewClient::with_transport(Arc::new(FixtureTransport::new(corpus())), test_policy(40))
        .unwrap()
        .with_clock(manual_clock());
    let retrieval = client.fetch_patents(&forward_citation_query(PLANTED)).unwrap();
    let profile = build_profile(PLANTED, &citers_of(&retrieval.result, PLANTED).unwrap()).unwrap();
    assert_eq!(reply.body, to_json(&diffusion_report(profile, &retrieval.result)));
}

#[tokio::test]
async fn diffusion_errors() {
    let f = fixture();
    get(f.app(), "/api/patents/4999999/diffusion").await.assert_error(StatusCode::NOT_FOUND, "not_found");
    get(f.app(), "/api/patents/US/diffusion").await.assert_error(StatusCode::BAD_REQUEST, "query_rejected");
    get(f.app(), &format!("/api/patents/{PLANTED}/diffusion?source=bogus"))
        .await
        .assert_error(StatusCode::BAD_REQUEST, "query_rejected");
}

#[tokio::test]
async fn year_drill_down() {
    let f = fixture();
    let uri = format!("/api/years/{PLANTED_YEAR}/top?query_hash={}", f.spectrum_id);
    let reply = get(f.app(), &uri).await;
    assert_eq!(reply.status, StatusCode::OK, "{}", reply.body);
    let body = reply.json();
    let patents = body["patents"].as_array().unwrap();
    assert_eq!(patents[0]["patent_id"], PLANTED);
    assert_eq!(patents[0]["rank"], 1);
    assert_eq!(patents[0]["title"], "Thin-film junction cell");
    assert!(patents.len() <= 10);
    let counts: Vec<u64> = patents.iter().map(|p| p["count"].as_u64().unwrap()).collect();
    assert!(counts.windows(2).all(|w| w[0] >= w[1]));
    assert!(body["c_total"].as_u64().unwrap() >= counts.iter().sum::<u64>());

    let limited = get(f.app(), &format!("{uri}&limit=2")).await.json();
    assert_eq!(limited["patents"].as_array().unwrap().len(), 2);

    let empty = get(f.app(), &format!("/api/years/1800/top?query_hash={}", &f.spectrum_id[..8])).await;
    assert_eq!(empty.status, StatusCode::OK);
    assert_eq!(empty.json()["patents"], json!([]));
    assert_eq!(empty.json()["c_total"], 0);
}

#[tokio::test]
async fn year_drill_down_errors() {
    let f = fixture();
    get(f.app(), "/api/years/1982/top").await.assert_error(StatusCode::BAD_REQUEST, "query_rejected");
    get(f.app(), "/api/years/1982/top?query_hash=00&limit=many")
        .await
        .assert_error(StatusCode::BAD_REQUEST, "query_rejected");
    get(f.app(), "/api/years/abc/top?query_hash=00").await.assert_error(StatusCode::BAD_REQUEST, "query_rejected");
    get(f.app(), "/api/years/1982/top?query_hash=0123456789ab")
        .await
        .assert_error(StatusCode::NOT_FOUND, "not_found");
}

#[tokio::test]
async fn health_and_unknown_routes() {
    let f = fixture();
    let reply = get(f.app(), "/api/health").await;
    assert_eq!(reply.status, StatusCode::OK);
    assert_eq!(reply.json()["status"], "ok");
    get(f.app(), "/api/nope").await.assert_error(StatusCode::NOT_FOUND, "not_found");
    get(f.app(), "/").await.assert_error(StatusCode::NOT_FOUND, "not_found");
}

#[tokio::test]
async fn serves_assets_and_allows_cross_origin_calls() {
    let f = fixture();
    let assets = tempfile::tempdir().unwrap();
    std::fs::write(assets.path().join("index.html"), "<html>explorer</html>").unwrap();
    let live = PatentsViewClient::with_transport(f.transport.clone(), test_policy(50)).unwrap();
    let app = router(Arc::new(AppState::new(f.store(), live)), Some(assets.path().to_path_buf()));

    let page = get(app.clone(), "/").await;
    assert_eq!(page.status, StatusCode::OK);
    assert_eq!(page.body, "<html>explorer</html>");

    let preflight = Request::options("/api/spectrum")
        .header(header::ORIGIN, "http://localhost:5173")
        .header(header::ACCESS_CONTROL_REQUEST_METHOD, "POST")
        .body(Body::empty())
        .unwrap();
    let response = app.oneshot(preflight).await.unwrap();
    assert!(response.status().is_success());
    assert!(response.headers().contains_key(header::ACCESS_CONTROL_ALLOW_ORIGIN));
}
