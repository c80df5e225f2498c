//! Analysis of a retrieval and the JSON / CSV / table renderings shared by
//! the command line and the HTTP service.

use std::fmt::Write as _;

use chrono::{Datelike, NaiveDate};
use serde::{Deserialize, Serialize};

use crate::canonical::to_canonical_string;
use crate::client::{PatentRecord, RetrievalResult};
use crate::diffusion::{profile_summary, DiffusionProfile, DiffusionSummary};
use crate::patent::display_patent_id;
use crate::spectrum::{
    build_citation_table, compute_spectrum, select_seminal_with, CitationTable, SeminalResult, Spectrum,
    SpectrumError,
};

pub const SPECTRUM_CSV_HEADER: [&str; 7] =
    ["year", "c_total", "median5", "f", "top_patent_id", "top_count", "pcs"];
pub const DIFFUSION_CSV_HEADER: [&str; 3] = ["year", "country", "citing_patents"];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatentInfo {
    pub patent_id: String,
    pub display_id: String,
    pub title: Option<String>,
    pub grant_date: Option<NaiveDate>,
    pub grant_year: Option<i32>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReportProvenance {
    pub snapshot_id: String,
    pub endpoint: String,
    pub retrieved_at: String,
    pub pages: u32,
    pub provider_total: u64,
    pub patents: u64,
    pub citation_edges_in: u64,
    pub deduplicated_edges: u64,
    pub edges_dropped_missing_year: u64,
    pub distinct_cited_patents: u64,
    pub truncated: bool,
    pub warnings: Vec<String>,
}

/// Everything derived from one retrieval.
#[derive(Debug, Clone)]
pub struct Analysis {
    pub table: CitationTable,
    /// Absent when no citation carried a grant year.
    pub spectrum: Option<Spectrum>,
    pub seminal: Option<SeminalResult>,
    pub seminal_patent: Option<PatentInfo>,
    pub provenance: ReportProvenance,
}

impl Analysis {
    pub fn no_signal(&self) -> bool {
        self.seminal.is_none()
    }

    /// Cited patents of `year` ranked by reference count.
    pub fn year_top(&self, year: i32, patents: &[PatentRecord], limit: usize) -> Vec<RankedPatent> {
        self.table
            .ranked(year)
            .into_iter()
            .take(limit)
            .enumerate()
            .map(|(i, (patent_id, count))| {
                let info = cited_info(patents, &patent_id);
                RankedPatent {
                    rank: i as u32 + 1,
                    display_id: info.display_id,
                    title: info.title,
                    patent_id,
                    count,
                }
            })
            .collect()
    }

    pub fn spectrum_report(&self) -> SpectrumReport {
        SpectrumReport {
            spectrum: self.spectrum.clone(),
            seminal: self.seminal.clone(),
            seminal_patent: self.seminal_patent.clone(),
            no_signal: self.no_signal(),
            provenance: self.provenance.clone(),
        }
    }

    pub fn seminal_report(&self) -> SeminalReport {
        SeminalReport {
            seminal: self.seminal.clone(),
            seminal_patent: self.seminal_patent.clone(),
            no_signal: self.no_signal(),
            provenance: self.provenance.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedPatent {
    pub rank: u32,
    pub patent_id: String,
    pub display_id: String,
    pub count: u64,
    pub title: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumReport {
    pub spectrum: Option<Spectrum>,
    pub seminal: Option<SeminalResult>,
    pub seminal_patent: Option<PatentInfo>,
    pub no_signal: bool,
    pub provenance: ReportProvenance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeminalReport {
    pub seminal: Option<SeminalResult>,
    pub seminal_patent: Option<PatentInfo>,
    pub no_signal: bool,
    pub provenance: ReportProvenance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiffusionReport {
    pub profile: DiffusionProfile,
    pub summary: DiffusionSummary,
    pub target: PatentInfo,
    pub provenance: ReportProvenance,
}

/// Title and grant date of `patent_id` as seen in the retrieval, either as a
/// retrieved patent or as a cited reference.
pub fn cited_info(patents: &[PatentRecord], patent_id: &str) -> PatentInfo {
    let mut info = PatentInfo {
        patent_id: patent_id.to_string(),
        display_id: display_patent_id(patent_id),
        title: None,
        grant_date: None,
        grant_year: None,
    };
    if let Some(p) = patents.iter().find(|p| p.patent_id == patent_id) {
        info.title = Some(p.title.clone()).filter(|t| !t.is_empty());
        info.grant_date = Some(p.grant_date);
    }
    for cited in patents.iter().flat_map(|p| p.cited.iter()).filter(|c| c.patent_id == patent_id) {
        if info.title.is_none() {
            info.title = cited.title.clone();
        }
        if info.grant_date.is_none() {
            info.grant_date = cited.grant_date;
        }
        if info.title.is_some() && info.grant_date.is_some() {
            break;
        }
    }
    info.grant_year = info.grant_date.map(|d| d.year());
    info
}

pub fn provenance_of(result: &RetrievalResult, table: &CitationTable) -> ReportProvenance {
    let p = &result.provenance;
    ReportProvenance {
        snapshot_id: p.request_hash.clone(),
        endpoint: p.endpoint.clone(),
        retrieved_at: p.timestamp.to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
        pages: p.page_count,
        provider_total: p.provider_total,
        patents: result.patents.len() as u64,
        citation_edges_in: table.total_edges_in,
        deduplicated_edges: table.deduplicated_edges,
        edges_dropped_missing_year: table.edges_dropped_missing_year,
        distinct_cited_patents: table.distinct_cited() as u64,
        truncated: p.truncated,
        warnings: p.warnings.clone(),
    }
}

/// Table → spectrum → seminal patent. An empty table or an all-zero
/// spectrum is an analytic outcome (`no_signal`), not an error; invalid
/// citation records are.
pub fn analyze(result: &RetrievalResult, runner_ups: usize) -> Result<Analysis, SpectrumError> {
    let table = build_citation_table(&result.citations)?;
    let provenance = provenance_of(result, &table);
    let spectrum = match compute_spectrum(&table) {
        Ok(s) => Some(s.with_provenance(result.provenance.request_hash.clone())),
        Err(SpectrumError::EmptyInput) => None,
        Err(other) => return Err(other),
    };
    let seminal = match spectrum.as_ref().map(|s| select_seminal_with(s, runner_ups)) {
        Some(Ok(s)) => Some(s),
        Some(Err(SpectrumError::NoSignal)) | None => None,
        Some(Err(other)) => return Err(other),
    };
    let seminal_patent = seminal.as_ref().map(|s| cited_info(&result.patents, &s.patent_id));
    Ok(Analysis {
        table,
        spectrum,
        seminal,
        seminal_patent,
        provenance,
    })
}

pub fn diffusion_report(
    profile: DiffusionProfile,
    result: &RetrievalResult,
) -> DiffusionReport {
    let table = build_citation_table(&result.citations).unwrap_or_default();
    let provenance = provenance_of(result, &table);
    DiffusionReport {
        summary: profile_summary(&profile),
        target: cited_info(&result.patents, &profile.target_patent_id),
        profile,
        provenance,
    }
}

/// Canonical JSON text (sorted keys) followed by a newline.
pub fn to_json<T: Serialize>(value: &T) -> String {
    let mut text = to_canonical_string(value).expect("report serializes");
    text.push('\n');
    text
}

/// Shortest text that parses back to the same `f64`.
pub fn fmt_num(value: f64) -> String {
    format!("{value}")
}

fn csv_text(header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> String {
    let mut writer = csv::Writer::from_writer(Vec::new());
    writer.write_record(header).expect("in-memory csv");
    for row in rows {
        writer.write_record(&row).expect("in-memory csv");
    }
    String::from_utf8(writer.into_inner().expect("in-memory csv")).expect("utf-8 csv")
}

pub fn spectrum_csv(spectrum: Option<&Spectrum>) -> String {
    let rows = spectrum.into_iter().flat_map(|s| s.points.iter()).map(|p| {
        vec![
            p.year.to_string(),
            p.c_total.to_string(),
            fmt_num(p.median5),
            fmt_num(p.f),
            p.top_patent_id.clone().unwrap_or_default(),
            p.top_count.to_string(),
            fmt_num(p.pcs),
        ]
    });
    csv_text(&SPECTRUM_CSV_HEADER, rows)
}

pub fn seminal_csv(report: &SeminalReport) -> String {
    let header = ["patent_id", "peak_year", "peak_pcs", "peak_top_count", "title", "co_leaders"];
    let rows = report.seminal.iter().map(|s| {
        vec![
            s.patent_id.clone(),
            s.peak_year.to_string(),
            fmt_num(s.peak_pcs),
            s.peak_top_count.to_string(),
            report
                .seminal_patent
                .as_ref()
                .and_then(|p| p.title.clone())
                .unwrap_or_default(),
            s.co_leaders.join(";"),
        ]
    });
    csv_text(&header, rows)
}

pub fn diffusion_csv(profile: &DiffusionProfile) -> String {
    let rows = profile
        .cells
        .iter()
        .map(|c| vec![c.year.to_string(), c.country.clone(), c.citing_patents.to_string()]);
    csv_text(&DIFFUSION_CSV_HEADER, rows)
}

pub fn spectrum_table(report: &SpectrumReport) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:>6} {:>8} {:>9} {:>10} {:>12} {:>6} {:>12}",
        "year", "c_total", "median5", "f", "top_patent", "top_n", "pcs"
    );
    for p in report.spectrum.iter().flat_map(|s| s.points.iter()) {
        let marker = match &report.seminal {
            Some(s) if s.peak_year == p.year => " <- peak",
            _ => "",
        };
        let _ = writeln!(
            out,
            "{:>6} {:>8} {:>9} {:>10} {:>12} {:>6} {:>12.4}{marker}",
            p.year,
            p.c_total,
            fmt_num(p.median5),
            fmt_num(p.f),
            p.top_patent_id.as_deref().unwrap_or("-"),
            p.top_count,
            p.pcs
        );
    }
    out.push('\n');
    out.push_str(&seminal_lines(report.seminal.as_ref(), report.seminal_patent.as_ref()));
    out
}

pub fn seminal_table(report: &SeminalReport) -> String {
    seminal_lines(report.seminal.as_ref(), report.seminal_patent.as_ref())
}

fn seminal_lines(seminal: Option<&SeminalResult>, info: Option<&PatentInfo>) -> String {
    let Some(s) = seminal else {
        return "no peak found: broaden the query\n".to_string();
    };
    let mut out = String::new();
    let _ = writeln!(out, "seminal patent  {}", s.patent_id);
    if let Some(title) = info.and_then(|i| i.title.as_deref()) {
        let _ = writeln!(out, "title           {title}");
    }
    if let Some(year) = info.and_then(|i| i.grant_year) {
        let _ = writeln!(out, "granted         {year}");
    }
    let _ = writeln!(out, "peak year       {}", s.peak_year);
    let _ = writeln!(out, "peak pcs        {:.4}", s.peak_pcs);
    let _ = writeln!(out, "references      {}", s.peak_top_count);
    if s.co_leaders.len() > 1 {
        let _ = writeln!(out, "tied with       {}", s.co_leaders.join(", "));
    }
    if !s.runner_up_years.is_empty() {
        let runners: Vec<String> = s
            .runner_up_years
            .iter()
            .map(|r| format!("{} ({:.2})", r.year, r.pcs))
            .collect();
        let _ = writeln!(out, "runner-up years {}", runners.join(", "));
    }
    out
}

pub fn diffusion_table(report: &DiffusionReport) -> String {
    let mut out = String::new();
    let p = &report.profile;
    let _ = writeln!(out, "target            {}", p.target_patent_id);
    let _ = writeln!(out, "citing patents    {}", p.citing_patents);
    let _ = writeln!(out, "inventors         {}", p.inventor_instances);
    if !report.summary.inventor_shares.is_empty() {
        let _ = writeln!(out, "\n{:<8} {:>9} {:>8} {:>6} {:>6}", "country", "inventors", "share", "first", "last");
        for s in &report.summary.inventor_shares {
            let _ = writeln!(
                out,
                "{:<8} {:>9} {:>7.1}% {:>6} {:>6}",
                s.country,
                s.inventors,
                s.share * 100.0,
                s.first_year.map_or("-".into(), |y| y.to_string()),
                s.last_year.map_or("-".into(), |y| y.to_string()),
            );
        }
    }
    if !report.summary.applicant_shares.is_empty() {
        let _ = writeln!(out, "\n{:<8} {:>10} {:>8}", "country", "applicants", "share");
        for s in &report.summary.applicant_shares {
            let _ = writeln!(out, "{:<8} {:>10} {:>7.1}%", s.country, s.applicants, s.share * 100.0);
        }
    }
    out
}
