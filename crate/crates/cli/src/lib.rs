//! The `pcs` command line: spectra, seminal patents, diffusion profiles and
//! snapshot management.
//!
//! Without `--live` every command answers from recorded snapshots, so runs
//! are offline and repeatable.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};

use chrono::SecondsFormat;
use clap::{Args, Parser, Subcommand, ValueEnum};
use pcs_core::client::{
    citers_of, forward_citation_query, record_snapshot, ClientError, FetchPolicy, PatentsViewClient, ReplaySource,
    Retrieval, RetrievalResult,
};
use pcs_core::diffusion::build_profile;
use pcs_core::patent::normalize_patent_id;
use pcs_core::query::{parse_advanced, parse_advanced_value, parse_keyword, parse_query_string, to_request, Query};
use pcs_core::report::{
    analyze, diffusion_csv, diffusion_report, diffusion_table, seminal_csv, seminal_table, spectrum_csv,
    spectrum_table, to_json, Analysis, ReportProvenance,
};
use pcs_core::snapshot::{SnapshotStore, StoreError};
use pcs_core::spectrum::DEFAULT_RUNNER_UPS;
use serde_json::{json, Value};

/// Process exit codes.
pub mod exit {
    pub const OK: i32 = 0;
    pub const INTERNAL: i32 = 1;
    pub const USAGE: i32 = 2;
    pub const QUERY_REJECTED: i32 = 3;
    pub const TRANSPORT: i32 = 4;
    pub const NO_SIGNAL: i32 = 5;
    pub const CORRUPT: i32 = 6;
    pub const NOT_FOUND: i32 = 7;
}

pub const STORE_ENV: &str = "PCS_STORE";
pub const DEFAULT_STORE: &str = ".pcs-store";

const EXIT_CODES_HELP: &str = "\
Exit codes:
  0  success
  1  internal error
  2  usage error
  3  query rejected (locally or by the provider)
  4  transport failure
  5  no signal: no cited year has any references
  6  corrupt snapshot
  7  not recorded / not found";

#[derive(Parser, Debug)]
#[command(
    name = "pcs",
    version,
    about = "Find the seminal patent behind a set of patents and follow its citations",
    after_help = EXIT_CODES_HELP
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Cited-year spectrum of the query's references, with the seminal patent.
    Spectrum {
        #[command(flatten)]
        query: QueryArgs,
        #[command(flatten)]
        source: SourceArgs,
        #[command(flatten)]
        output: OutputArgs,
        /// Runner-up peak years to report.
        #[arg(long, default_value_t = DEFAULT_RUNNER_UPS)]
        top_k: usize,
    },
    /// The seminal patent of the query's references.
    Seminal {
        #[command(flatten)]
        query: QueryArgs,
        #[command(flatten)]
        source: SourceArgs,
        #[command(flatten)]
        output: OutputArgs,
        /// Runner-up peak years to report.
        #[arg(long, default_value_t = DEFAULT_RUNNER_UPS)]
        top_k: usize,
    },
    /// Country-by-year spread of the patents citing PATENT.
    Diffusion {
        /// Target patent, e.g. 4335266 or US4335266.
        patent: String,
        #[command(flatten)]
        source: SourceArgs,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Record a query's provider responses as a snapshot.
    Fetch {
        #[command(flatten)]
        target: FetchTarget,
        /// Contact the provider even when the query is already recorded.
        #[arg(long)]
        live: bool,
        #[command(flatten)]
        store: StoreArgs,
        #[command(flatten)]
        paging: PagingArgs,
    },
    /// Inspect the snapshot store.
    Snapshots {
        #[command(subcommand)]
        action: SnapshotAction,
    },
}

#[derive(Subcommand, Debug)]
enum SnapshotAction {
    /// Recorded snapshots, newest first.
    List {
        #[command(flatten)]
        store: StoreArgs,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// One snapshot's query and retrieval totals.
    Show {
        /// Snapshot id or a unique prefix of at least six characters.
        id: String,
        #[command(flatten)]
        store: StoreArgs,
        #[command(flatten)]
        output: OutputArgs,
    },
}

#[derive(Args, Debug)]
#[group(required = true, multiple = false)]
struct QueryArgs {
    /// Keyword phrase matched against titles and abstracts.
    #[arg(long)]
    keyword: Option<String>,
    /// Provider JSON criteria, e.g. '{"cpc_subgroup_id":"Y02E10V541"}'.
    #[arg(long)]
    advanced: Option<String>,
    /// Search-box form: a keyword phrase, or ADVANCED=<criteria>.
    #[arg(long)]
    query: Option<String>,
}

impl QueryArgs {
    fn parse(&self) -> Result<Query, Failure> {
        let parsed = match (&self.keyword, &self.advanced, &self.query) {
            (Some(k), _, _) => parse_keyword(k),
            (_, Some(a), _) => parse_advanced(a),
            (_, _, Some(q)) => parse_query_string(q),
            _ => return Err(Failure::usage("one of --keyword, --advanced or --query is required")),
        };
        parsed.map_err(|e| Failure::new(exit::QUERY_REJECTED, format!("invalid query: {e}")))
    }
}

#[derive(Args, Debug)]
#[group(required = true, multiple = false)]
struct FetchTarget {
    /// Keyword phrase matched against titles and abstracts.
    #[arg(long)]
    keyword: Option<String>,
    /// Provider JSON criteria.
    #[arg(long)]
    advanced: Option<String>,
    /// Search-box form: a keyword phrase, or ADVANCED=<criteria>.
    #[arg(long)]
    query: Option<String>,
    /// Record the patent and every patent citing it (input for `diffusion`).
    #[arg(long)]
    patent: Option<String>,
}

impl FetchTarget {
    fn parse(&self) -> Result<Query, Failure> {
        if let Some(patent) = &self.patent {
            return Ok(forward_citation_query(&patent_id(patent)?));
        }
        QueryArgs {
            keyword: self.keyword.clone(),
            advanced: self.advanced.clone(),
            query: self.query.clone(),
        }
        .parse()
    }
}

#[derive(Args, Debug)]
struct SourceArgs {
    /// Replay from a snapshot id or prefix, a snapshot directory, or a store directory.
    #[arg(long, value_name = "ID|PATH", conflicts_with = "live")]
    replay: Option<String>,
    /// Query the provider instead of recorded snapshots.
    #[arg(long)]
    live: bool,
    #[command(flatten)]
    store: StoreArgs,
    #[command(flatten)]
    paging: PagingArgs,
}

#[derive(Args, Debug)]
struct StoreArgs {
    /// Snapshot store directory.
    #[arg(long, env = STORE_ENV, default_value = DEFAULT_STORE)]
    store: PathBuf,
}

#[derive(Args, Debug)]
struct PagingArgs {
    /// Records per provider page (live requests only).
    #[arg(long, default_value_t = 10_000, value_parser = clap::value_parser!(u32).range(1..=10_000))]
    per_page: u32,
    /// Stop after this many pages (live requests only).
    #[arg(long, value_parser = clap::value_parser!(u32).range(1..))]
    max_pages: Option<u32>,
}

impl PagingArgs {
    fn policy(&self) -> FetchPolicy {
        FetchPolicy {
            per_page: self.per_page,
            max_pages: self.max_pages,
            ..FetchPolicy::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Csv,
    Table,
}

#[derive(Args, Debug)]
struct OutputArgs {
    #[arg(long, value_enum, default_value_t = Format::Table)]
    format: Format,
    /// Write to this file instead of standard output.
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,
}

#[derive(Debug)]
struct Failure {
    code: i32,
    message: String,
}

impl Failure {
    fn new(code: i32, message: impl Into<String>) -> Self {
        Failure {
            code,
            message: message.into(),
        }
    }

    fn usage(message: impl Into<String>) -> Self {
        Failure::new(exit::USAGE, message)
    }
}

impl From<StoreError> for Failure {
    fn from(err: StoreError) -> Self {
        let code = match &err {
            StoreError::CacheMiss { .. } => exit::NOT_FOUND,
            StoreError::Ambiguous { .. } => exit::USAGE,
            StoreError::Corrupt { .. } | StoreError::Integrity { .. } | StoreError::UnsupportedVersion { .. } => {
                exit::CORRUPT
            }
            StoreError::Io { .. } => exit::INTERNAL,
        };
        let hint = match &err {
            StoreError::CacheMiss { .. } => " (see `pcs snapshots list`)",
            StoreError::Corrupt { .. } | StoreError::Integrity { .. } => {
                " (re-record it with `pcs fetch --live`)"
            }
            StoreError::Ambiguous { .. } => " (use a longer prefix)",
            _ => "",
        };
        Failure::new(code, format!("{err}{hint}"))
    }
}

impl From<ClientError> for Failure {
    fn from(err: ClientError) -> Self {
        match err {
            ClientError::Store(store) => store.into(),
            ClientError::QueryRejected { .. } | ClientError::InvalidQuery(_) => {
                Failure::new(exit::QUERY_REJECTED, err.to_string())
            }
            ClientError::Transport { .. } | ClientError::Decode { .. } => Failure::new(
                exit::TRANSPORT,
                format!("{err} (check connectivity and PATENTSVIEW_API_KEY, or replay a snapshot)"),
            ),
            ClientError::NotFound(_) => Failure::new(exit::NOT_FOUND, err.to_string()),
            ClientError::CacheMiss(_) => Failure::new(
                exit::NOT_FOUND,
                format!("{err} (record it with `pcs fetch --live`, or pass --live)"),
            ),
            ClientError::Policy(_) => Failure::new(exit::USAGE, err.to_string()),
        }
    }
}

/// Runs one command line. Output goes to `out` unless `--out` names a file;
/// diagnostics go to `err`. Returns the process exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) if e.use_stderr() => {
            let _ = write!(err, "{e}");
            return exit::USAGE;
        }
        Err(e) => {
            let _ = write!(out, "{e}");
            return exit::OK;
        }
    };
    match execute(cli.command, out, err) {
        Ok(code) => code,
        Err(failure) => {
            let _ = writeln!(err, "error: {}", failure.message);
            failure.code
        }
    }
}

fn execute(command: Command, out: &mut dyn Write, err: &mut dyn Write) -> Result<i32, Failure> {
    match command {
        Command::Spectrum {
            query,
            source,
            output,
            top_k,
        } => {
            let (_, analysis) = analyze_query(&query.parse()?, &source, top_k)?;
            let report = analysis.spectrum_report();
            let text = match output.format {
                Format::Json => to_json(&report),
                Format::Csv => spectrum_csv(analysis.spectrum.as_ref()),
                Format::Table => format!("{}{}", provenance_lines(&analysis.provenance), spectrum_table(&report)),
            };
            emit(&output, &text, out)?;
            Ok(signal_code(&analysis, err))
        }
        Command::Seminal {
            query,
            source,
            output,
            top_k,
        } => {
            let (_, analysis) = analyze_query(&query.parse()?, &source, top_k)?;
            let report = analysis.seminal_report();
            let text = match output.format {
                Format::Json => to_json(&report),
                Format::Csv => seminal_csv(&report),
                Format::Table => seminal_table(&report),
            };
            emit(&output, &text, out)?;
            Ok(signal_code(&analysis, err))
        }
        Command::Diffusion { patent, source, output } => {
            let id = patent_id(&patent)?;
            let retrieval = client_for(&source)?.fetch_patents(&forward_citation_query(&id))?;
            let citers = citers_of(&retrieval.result, &id)?;
            let profile = build_profile(&id, &citers).map_err(|e| Failure::new(exit::INTERNAL, e.to_string()))?;
            let report = diffusion_report(profile, &retrieval.result);
            let text = match output.format {
                Format::Json => to_json(&report),
                Format::Csv => diffusion_csv(&report.profile),
                Format::Table => diffusion_table(&report),
            };
            emit(&output, &text, out)?;
            Ok(exit::OK)
        }
        Command::Fetch {
            target,
            live,
            store,
            paging,
        } => fetch(&target.parse()?, live, &SnapshotStore::new(&store.store), &paging, out),
        Command::Snapshots { action } => match action {
            SnapshotAction::List { store, output } => {
                list_snapshots(&SnapshotStore::new(&store.store), &output, out)?;
                Ok(exit::OK)
            }
            SnapshotAction::Show { id, store, output } => {
                show_snapshot(&SnapshotStore::new(&store.store), &id, &output, out)?;
                Ok(exit::OK)
            }
        },
    }
}

fn patent_id(raw: &str) -> Result<String, Failure> {
    let id = normalize_patent_id(raw);
    if id.is_empty() {
        return Err(Failure::usage(format!("`{raw}` is not a patent number")));
    }
    Ok(id)
}

fn signal_code(analysis: &Analysis, err: &mut dyn Write) -> i32 {
    if analysis.no_signal() {
        let _ = writeln!(err, "no peak found: broaden the query");
        exit::NO_SIGNAL
    } else {
        exit::OK
    }
}

fn analyze_query(query: &Query, source: &SourceArgs, top_k: usize) -> Result<(Retrieval, Analysis), Failure> {
    let retrieval = client_for(source)?.fetch_patents(query)?;
    let analysis = analyze(&retrieval.result, top_k).map_err(|e| Failure::new(exit::INTERNAL, e.to_string()))?;
    Ok((retrieval, analysis))
}

fn client_for(source: &SourceArgs) -> Result<PatentsViewClient, Failure> {
    let client = PatentsViewClient::from_env(source.paging.policy())?;
    if source.live {
        return Ok(client);
    }
    let replay = match &source.replay {
        None => ReplaySource::store(SnapshotStore::new(&source.store.store)),
        Some(target) => replay_target(target, &source.store.store)?,
    };
    Ok(client.replaying(replay))
}

/// A snapshot directory, a store directory, or an id within `store`.
fn replay_target(target: &str, store: &Path) -> Result<ReplaySource, Failure> {
    let path = Path::new(target);
    if path.join("meta.json").is_file() {
        let root = path
            .canonicalize()
            .ok()
            .and_then(|p| p.parent().map(Path::to_path_buf))
            .ok_or_else(|| Failure::usage(format!("cannot resolve snapshot directory {target}")))?;
        let id = path
            .file_name()
            .and_then(|n| n.to_str())
            .ok_or_else(|| Failure::usage(format!("cannot resolve snapshot directory {target}")))?;
        return Ok(ReplaySource::snapshot(SnapshotStore::new(root), id)?);
    }
    if path.is_dir() {
        return Ok(ReplaySource::store(SnapshotStore::new(path)));
    }
    Ok(ReplaySource::snapshot(SnapshotStore::new(store), target)?)
}

fn fetch(
    query: &Query,
    live: bool,
    store: &SnapshotStore,
    paging: &PagingArgs,
    out: &mut dyn Write,
) -> Result<i32, Failure> {
    if !live {
        let probe = to_request(query, 1, paging.per_page).map_err(ClientError::from)?;
        if let Ok(existing) = ReplaySource::store(store.clone()).find(&probe) {
            write_out(out, &format!("{}  already recorded (pass --live to refresh)\n", existing.id))?;
            return Ok(exit::OK);
        }
    }
    let client = PatentsViewClient::from_env(paging.policy())?;
    let retrieval = client.fetch_patents_with_progress(query, &|p| {
        eprintln!("fetched page {}/{}", p.pages_fetched, p.total_pages);
    })?;
    let id = record_snapshot(&retrieval, store)?;
    let p = &retrieval.result.provenance;
    let mut text = format!(
        "{id}  {} page(s), {} patents, {} citation edges{}\n",
        p.page_count,
        p.records_received,
        retrieval.result.citations.len(),
        if p.truncated { ", truncated" } else { "" }
    );
    for warning in &p.warnings {
        let _ = writeln!(text, "warning: {warning}");
    }
    write_out(out, &text)?;
    Ok(exit::OK)
}

fn describe_request(request_body: &str) -> String {
    serde_json::from_str::<Value>(request_body)
        .ok()
        .and_then(|v| parse_advanced_value(&v["q"]).ok())
        .map(|q| q.describe())
        .unwrap_or_else(|| request_body.to_string())
}

fn list_snapshots(store: &SnapshotStore, output: &OutputArgs, out: &mut dyn Write) -> Result<(), Failure> {
    let summaries = store.list()?;
    let text = match output.format {
        Format::Json => to_json(&summaries),
        Format::Csv => {
            let mut text = String::from("id,created_at,pages,query\n");
            for s in &summaries {
                let _ = writeln!(
                    text,
                    "{},{},{},{}",
                    s.id,
                    s.created_at.to_rfc3339_opts(SecondsFormat::Secs, true),
                    s.page_count,
                    csv_field(&describe_request(&s.query_text))
                );
            }
            text
        }
        Format::Table => {
            let mut text = format!("{:<14} {:<20} {:>5}  query\n", "id", "created", "pages");
            for s in &summaries {
                let _ = writeln!(
                    text,
                    "{:<14} {:<20} {:>5}  {}",
                    &s.id[..12.min(s.id.len())],
                    s.created_at.to_rfc3339_opts(SecondsFormat::Secs, true),
                    s.page_count,
                    describe_request(&s.query_text)
                );
            }
            text
        }
    };
    emit(output, &text, out)
}

fn show_snapshot(store: &SnapshotStore, id: &str, output: &OutputArgs, out: &mut dyn Write) -> Result<(), Failure> {
    let snapshot = store.get(id)?;
    let result: RetrievalResult = serde_json::from_str(&snapshot.normalized).map_err(|e| {
        Failure::from(StoreError::Corrupt {
            id: snapshot.id.clone(),
            detail: format!("normalized.json: {e}"),
        })
    })?;
    let table = pcs_core::spectrum::build_citation_table(&result.citations).unwrap_or_default();
    let provenance = pcs_core::report::provenance_of(&result, &table);
    let created = snapshot.created_at.to_rfc3339_opts(SecondsFormat::Secs, true);
    let query = describe_request(&snapshot.query_text);
    let text = match output.format {
        Format::Json => to_json(&json!({
            "id": snapshot.id,
            "created_at": created,
            "format_version": snapshot.format_version,
            "query": query,
            "request": serde_json::from_str::<Value>(&snapshot.query_text).unwrap_or(Value::Null),
            "provenance": provenance,
        })),
        Format::Csv => {
            let mut text = String::from("id,created_at,query,pages,patents,deduplicated_edges,edges_dropped_missing_year\n");
            let _ = writeln!(
                text,
                "{},{},{},{},{},{},{}",
                snapshot.id,
                created,
                csv_field(&query),
                provenance.pages,
                provenance.patents,
                provenance.deduplicated_edges,
                provenance.edges_dropped_missing_year
            );
            text
        }
        Format::Table => format!(
            "id                {}\ncreated           {created}\nquery             {query}\n{}",
            snapshot.id,
            provenance_lines(&provenance)
        ),
    };
    emit(output, &text, out)
}

fn csv_field(value: &str) -> String {
    if value.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", value.replace('"', "\"\""))
    } else {
        value.to_string()
    }
}

fn provenance_lines(p: &ReportProvenance) -> String {
    let mut text = String::new();
    let _ = writeln!(text, "snapshot          {}", p.snapshot_id);
    let _ = writeln!(text, "retrieved         {} from {}", p.retrieved_at, p.endpoint);
    let _ = writeln!(
        text,
        "patents           {} of {} reported ({} page(s){})",
        p.patents,
        p.provider_total,
        p.pages,
        if p.truncated { ", truncated" } else { "" }
    );
    let _ = writeln!(text, "unique references {}", p.distinct_cited_patents);
    let _ = writeln!(
        text,
        "citation edges    {} in, {} distinct, {} without grant year",
        p.citation_edges_in, p.deduplicated_edges, p.edges_dropped_missing_year
    );
    for warning in &p.warnings {
        let _ = writeln!(text, "warning           {warning}");
    }
    text.push('\n');
    text
}

fn emit(output: &OutputArgs, text: &str, out: &mut dyn Write) -> Result<(), Failure> {
    match &output.out {
        Some(path) => std::fs::write(path, text)
            .map_err(|e| Failure::new(exit::INTERNAL, format!("cannot write {}: {e}", path.display()))),
        None => write_out(out, text),
    }
}

fn write_out(out: &mut dyn Write, text: &str) -> Result<(), Failure> {
    out.write_all(text.as_bytes())
        .and_then(|_| out.flush())
        .map_err(|e| Failure::new(exit::INTERNAL, format!("cannot write output: {e}")))
}
