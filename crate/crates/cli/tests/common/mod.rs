#![allow(dead_code)]

use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::path::Path;
use std::process::{Command, Output};
use std::sync::Arc;
use std::time::Duration;

use pcs_core::client::forward_citation_query;
use pcs_core::client::transport::{HttpRequest, Transport};
use pcs_core::client::PatentRecord;
use pcs_core::query::{parse_advanced, Query};
use pcs_core::snapshot::SnapshotStore;
use pcs_core::testing::{record_fixture, synthetic_corpus, CorpusSpec, FixtureTransport};
use tempfile::TempDir;

pub const CPC: &str = "TEST01V001";
pub const PLANTED: &str = "7100001";
pub const PLANTED_YEAR: i32 = 1983;

pub fn cpc_criteria() -> String {
    format!(r#"{{"cpc_subgroup_id":"{CPC}"}}"#)
}

pub fn cpc_query() -> Query {
    parse_advanced(&cpc_criteria()).unwrap()
}

pub fn planted_corpus() -> Vec<PatentRecord> {
    synthetic_corpus(&CorpusSpec::new(7, CPC, 150).planted(PLANTED, PLANTED_YEAR, "Layered photoconversion device", 0.5))
}

pub struct FixtureStore {
    pub dir: TempDir,
    pub spectrum_id: String,
    pub diffusion_id: String,
}

impl FixtureStore {
    pub fn path(&self) -> &str {
        self.dir.path().to_str().unwrap()
    }
}

/// A store holding the planted corpus's query (three pages) and the planted
/// patent's forward-citation query.
pub fn fixture_store() -> FixtureStore {
    let dir = tempfile::tempdir().unwrap();
    let store = SnapshotStore::new(dir.path());
    let spectrum_id = record_fixture(&store, planted_corpus(), &cpc_query(), 60);
    let diffusion_id = record_fixture(&store, planted_corpus(), &forward_citation_query(PLANTED), 50);
    FixtureStore {
        dir,
        spectrum_id,
        diffusion_id,
    }
}

/// Runs the `pcs` binary with a clean environment.
pub fn pcs(args: &[&str]) -> Output {
    pcs_with_env(args, &[])
}

pub fn pcs_with_env(args: &[&str], env: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_pcs"));
    cmd.args(args)
        .env_remove("PCS_STORE")
        .env_remove("PATENTSVIEW_API_KEY")
        .env_remove("PATENTSVIEW_BASE_URL");
    for (k, v) in env {
        cmd.env(k, v);
    }
    cmd.output().unwrap()
}

pub fn stdout(output: &Output) -> String {
    String::from_utf8(output.stdout.clone()).unwrap()
}

pub fn stderr(output: &Output) -> String {
    String::from_utf8(output.stderr.clone()).unwrap()
}

/// Local HTTP stand-in for the provider, answering from `records` through
/// the fixture transport. Serves until the returned transport is dropped by
/// the test process exiting; every request is counted by the transport.
pub fn serve(records: Vec<PatentRecord>) -> (String, Arc<FixtureTransport>) {
    serve_transport(Arc::new(FixtureTransport::new(records)))
}

pub fn serve_transport(transport: Arc<FixtureTransport>) -> (String, Arc<FixtureTransport>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/patents/query", listener.local_addr().unwrap());
    let handler = transport.clone();
    std::thread::spawn(move || {
        for stream in listener.incoming() {
            let Ok(stream) = stream else { continue };
            let handler = handler.clone();
            std::thread::spawn(move || {
                let mut reader = BufReader::new(stream.try_clone().unwrap());
                let mut length = 0usize;
                loop {
                    let mut line = String::new();
                    if reader.read_line(&mut line).unwrap_or(0) == 0 {
                        return;
                    }
                    if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                        length = v.trim().parse().unwrap_or(0);
                    }
                    if line == "\r\n" {
                        break;
                    }
                }
                let mut body = vec![0u8; length];
                if reader.read_exact(&mut body).is_err() {
                    return;
                }
                let body = String::from_utf8_lossy(&body).to_string();
                let request = HttpRequest {
                    url: "",
                    body: &body,
                    api_key: None,
                    timeout: Duration::from_secs(5),
                };
                let response = handler.post(&request).unwrap();
                let mut stream = stream;
                let _ = write!(
                    stream,
                    "HTTP/1.1 {} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{}",
                    response.status,
                    response.body.len(),
                    response.body
                );
            });
        }
    });
    (url, transport)
}

pub fn flip_byte(path: &Path, at: usize) {
    let mut bytes = std::fs::read(path).unwrap();
    bytes[at] ^= 0x01;
    std::fs::write(path, bytes).unwrap();
}
