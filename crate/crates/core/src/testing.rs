//! Synthetic corpora and scripted transports for tests.

use std::collections::VecDeque;
use std::sync::atomic::{AtomicU32, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use chrono::{NaiveDate, TimeZone, Utc};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use serde_json::Value;

use crate::client::pacing::{ManualClock, RateLimit};
use crate::client::transport::{HttpRequest, HttpResponse, Transport, TransportFailure};
use crate::client::wire::encode_page;
use crate::client::{record_snapshot, CitedRef, FetchPolicy, Party, PatentRecord, PatentsViewClient};
use crate::query::Query;
use crate::snapshot::SnapshotStore;

/// A patent planted in a corpus so that a known fraction of citers cite it.
#[derive(Debug, Clone)]
pub struct Planted {
    pub patent_id: String,
    pub grant_date: NaiveDate,
    pub title: String,
    /// Probability that a citing patent cites the planted one.
    pub share: f64,
}

#[derive(Debug, Clone)]
pub struct CorpusSpec {
    pub seed: u64,
    pub cpc: String,
    pub citing: usize,
    /// First digit(s) of generated citing patent ids; keeps corpora disjoint.
    pub id_prefix: String,
    pub background_pool: usize,
    pub refs_per_patent: usize,
    pub planted: Option<Planted>,
}

impl CorpusSpec {
    pub fn new(seed: u64, cpc: &str, citing: usize) -> Self {
        CorpusSpec {
            seed,
            cpc: cpc.to_string(),
            citing,
            id_prefix: "9".into(),
            background_pool: 400,
            refs_per_patent: 8,
            planted: None,
        }
    }

    pub fn planted(mut self, patent_id: &str, year: i32, title: &str, share: f64) -> Self {
        self.planted = Some(Planted {
            patent_id: patent_id.to_string(),
            grant_date: NaiveDate::from_ymd_opt(year, 6, 15).expect("valid date"),
            title: title.to_string(),
            share,
        });
        self
    }

    pub fn id_prefix(mut self, prefix: &str) -> Self {
        self.id_prefix = prefix.to_string();
        self
    }
}

const COUNTRIES: [(Option<&str>, f64); 6] = [
    (Some("US"), 0.62),
    (Some("JP"), 0.16),
    (Some("TW"), 0.06),
    (Some("DE"), 0.08),
    (Some("KR"), 0.04),
    (None, 0.04),
];

fn pick_country(rng: &mut StdRng) -> Option<String> {
    let mut roll: f64 = rng.random();
    for (country, weight) in COUNTRIES {
        if roll < weight {
            return country.map(str::to_string);
        }
        roll -= weight;
    }
    Some("US".into())
}

/// Deterministic corpus of citing patents. Background references are drawn
/// from a pool with grant years 1960–1994; citing patents are granted
/// 1996–2015.
pub fn synthetic_corpus(spec: &CorpusSpec) -> Vec<PatentRecord> {
    let mut rng = StdRng::seed_from_u64(spec.seed);
    let pool: Vec<CitedRef> = (0..spec.background_pool)
        .map(|i| {
            let year = 1960 + (i % 35) as i32;
            CitedRef {
                patent_id: format!("{}", 3_000_000 + spec.seed as usize * 10_000 + i),
                grant_date: NaiveDate::from_ymd_opt(year, 1 + (i % 12) as u32, 1 + (i % 28) as u32),
                title: Some(format!("Background invention {i}")),
            }
        })
        .collect();

    (0..spec.citing)
        .map(|i| {
            let year = 1996 + (i % 20) as i32;
            let grant_date = NaiveDate::from_ymd_opt(year, 1 + (i % 12) as u32, 1 + (i % 27) as u32)
                .expect("valid date");
            let mut cited: Vec<CitedRef> = Vec::new();
            while cited.len() < spec.refs_per_patent.min(pool.len()) {
                let pick = &pool[rng.random_range(0..pool.len())];
                if !cited.iter().any(|c| c.patent_id == pick.patent_id) {
                    cited.push(pick.clone());
                }
            }
            if let Some(planted) = &spec.planted {
                if rng.random_bool(planted.share) {
                    cited.push(CitedRef {
                        patent_id: planted.patent_id.clone(),
                        grant_date: Some(planted.grant_date),
                        title: Some(planted.title.clone()),
                    });
                }
            }
            // A reference whose grant date the provider could not resolve.
            if rng.random_bool(0.1) {
                cited.push(CitedRef {
                    patent_id: format!("{}", 2_000_000 + i),
                    grant_date: None,
                    title: None,
                });
            }
            let inventors = (0..rng.random_range(1..=3))
                .map(|k| Party {
                    name: format!("Inventor{k} Citer{i}"),
                    country: pick_country(&mut rng),
                })
                .collect();
            let assignees = vec![Party {
                name: format!("Company {}", i % 17),
                country: pick_country(&mut rng),
            }];
            PatentRecord {
                patent_id: format!("{}{:06}", spec.id_prefix, i + 1),
                title: format!("Citing device {i}"),
                grant_date,
                inventors,
                assignees,
                cpc_subgroups: vec![spec.cpc.clone()],
                cited,
            }
        })
        .collect()
}

/// Minimal criteria evaluator: equality on a handful of fields and the
/// boolean combinators. Anything else matches every record.
pub fn criteria_match(criteria: &Value, record: &PatentRecord) -> bool {
    let Some(obj) = criteria.as_object() else {
        return true;
    };
    let Some((key, inner)) = obj.iter().next() else {
        return true;
    };
    match key.as_str() {
        "_and" => inner
            .as_array()
            .is_none_or(|items| items.iter().all(|c| criteria_match(c, record))),
        "_or" => inner
            .as_array()
            .is_none_or(|items| items.iter().any(|c| criteria_match(c, record))),
        "_not" => !criteria_match(inner, record),
        "_eq" => criteria_match(inner, record),
        k if k.starts_with('_') => true,
        field => {
            let Some(want) = inner.as_str() else {
                return true;
            };
            match field {
                "patent_number" => record.patent_id == want,
                "cited_patent_number" => record.cites(want),
                "cpc_subgroup_id" => record.cpc_subgroups.iter().any(|c| c == want),
                "inventor_country" => record
                    .inventors
                    .iter()
                    .any(|p| p.country.as_deref() == Some(want)),
                _ => true,
            }
        }
    }
}

/// Serves provider pages out of an in-memory record list.
pub struct FixtureTransport {
    records: Vec<PatentRecord>,
    calls: AtomicU32,
    failures_left: AtomicU32,
    failure_status: u16,
    reported_total: Option<u64>,
    pages_served: Mutex<Vec<u32>>,
}

impl FixtureTransport {
    pub fn new(records: Vec<PatentRecord>) -> Self {
        FixtureTransport {
            records,
            calls: AtomicU32::new(0),
            failures_left: AtomicU32::new(0),
            failure_status: 503,
            reported_total: None,
            pages_served: Mutex::new(Vec::new()),
        }
    }

    /// Answer the first `n` requests with `status`.
    pub fn failing_first(mut self, n: u32, status: u16) -> Self {
        self.failures_left = AtomicU32::new(n);
        self.failure_status = status;
        self
    }

    /// Report a total that differs from the records actually served.
    pub fn reporting_total(mut self, total: u64) -> Self {
        self.reported_total = Some(total);
        self
    }

    pub fn calls(&self) -> u32 {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn pages_served(&self) -> Vec<u32> {
        self.pages_served.lock().expect("pages").clone()
    }
}

impl Transport for FixtureTransport {
    fn post(&self, request: &HttpRequest<'_>) -> Result<HttpResponse, TransportFailure> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        if self
            .failures_left
            .fetch_update(Ordering::SeqCst, Ordering::SeqCst, |n| n.checked_sub(1))
            .is_ok()
        {
            return Ok(HttpResponse {
                status: self.failure_status,
                body: r#"{"error":"injected failure"}"#.into(),
            });
        }
        let body: Value = serde_json::from_str(request.body).map_err(|e| TransportFailure::Io(e.to_string()))?;
        let page = body["o"]["page"].as_u64().unwrap_or(1) as usize;
        let per_page = body["o"]["per_page"].as_u64().unwrap_or(25) as usize;
        let matching: Vec<PatentRecord> = self
            .records
            .iter()
            .filter(|r| criteria_match(&body["q"], r))
            .cloned()
            .collect();
        let start = ((page - 1) * per_page).min(matching.len());
        let end = (page * per_page).min(matching.len());
        self.pages_served.lock().expect("pages").push(page as u32);
        let total = self.reported_total.unwrap_or(matching.len() as u64);
        Ok(HttpResponse {
            status: 200,
            body: encode_page(&matching[start..end], total),
        })
    }
}

/// Fails every request; proves a code path never touches the network.
#[derive(Default)]
pub struct OfflineTransport {
    calls: AtomicU32,
}

impl OfflineTransport {
    pub fn calls(&self) -> u32 {
        self.calls.load(Ordering::SeqCst)
    }
}

impl Transport for OfflineTransport {
    fn post(&self, _request: &HttpRequest<'_>) -> Result<HttpResponse, TransportFailure> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        Err(TransportFailure::Io("network access is disabled in this test".into()))
    }
}

/// Replies with a fixed script of outcomes, one per request.
pub struct ScriptedTransport {
    script: Mutex<VecDeque<Result<HttpResponse, TransportFailure>>>,
    calls: AtomicU32,
}

impl ScriptedTransport {
    pub fn new(script: Vec<Result<HttpResponse, TransportFailure>>) -> Self {
        ScriptedTransport {
            script: Mutex::new(script.into()),
            calls: AtomicU32::new(0),
        }
    }

    pub fn calls(&self) -> u32 {
        self.calls.load(Ordering::SeqCst)
    }
}

impl Transport for ScriptedTransport {
    fn post(&self, _request: &HttpRequest<'_>) -> Result<HttpResponse, TransportFailure> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.script
            .lock()
            .expect("script")
            .pop_front()
            .unwrap_or_else(|| Err(TransportFailure::Io("script exhausted".into())))
    }
}

pub fn manual_clock() -> Arc<ManualClock> {
    Arc::new(ManualClock::new(Utc.with_ymd_and_hms(2024, 3, 1, 12, 0, 0).unwrap()))
}

/// Policy with fast backoff and a generous rate ceiling.
pub fn test_policy(per_page: u32) -> FetchPolicy {
    FetchPolicy {
        per_page,
        backoff_base: Duration::from_millis(10),
        backoff_max: Duration::from_millis(100),
        rate_limit: RateLimit::per_second(1000),
        ..FetchPolicy::default()
    }
}

/// Fetches `query` from a fixture transport over `records` and stores the
/// snapshot. Returns the snapshot id.
pub fn record_fixture(store: &SnapshotStore, records: Vec<PatentRecord>, query: &Query, per_page: u32) -> String {
    let client = PatentsViewClient::with_transport(Arc::new(FixtureTransport::new(records)), test_policy(per_page))
        .expect("valid policy")
        .with_clock(manual_clock());
    let retrieval = client.fetch_patents(query).expect("fixture fetch");
    record_snapshot(&retrieval, store).expect("fixture snapshot")
}
