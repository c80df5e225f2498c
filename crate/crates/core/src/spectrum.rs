//! Cited-year spectrum, median de-trending and seminal-patent selection.
//!
//! The pipeline is `build_citation_table` → `compute_spectrum` →
//! `select_seminal`. Everything here is a pure function of its input.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, HashMap};

use chrono::Datelike;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// First year the US patent office granted patents.
pub const EARLIEST_GRANT_YEAR: i32 = 1790;

/// Half-width of the de-trending window: `t-2 ..= t+2`.
const WINDOW_RADIUS: i32 = 2;

/// Default number of runner-up peaks reported next to the seminal year.
pub const DEFAULT_RUNNER_UPS: usize = 5;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SpectrumError {
    #[error("rejected citation record #{index} ({citing_id} -> {cited_id}): {reason}")]
    InvalidRecord {
        index: usize,
        citing_id: String,
        cited_id: String,
        reason: String,
    },
    #[error("no dated citations to aggregate; a spectrum needs at least one cited year")]
    EmptyInput,
    #[error("spectrum carries no citations in any year; broaden the query")]
    NoSignal,
}

/// One citing → cited edge. `cited_grant_year` is the grant year of the cited
/// patent, absent when the provider could not resolve it.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CitationRecord {
    pub citing_id: String,
    pub cited_id: String,
    pub cited_grant_year: Option<i32>,
}

impl CitationRecord {
    pub fn new(citing_id: impl Into<String>, cited_id: impl Into<String>, year: Option<i32>) -> Self {
        Self {
            citing_id: citing_id.into(),
            cited_id: cited_id.into(),
            cited_grant_year: year,
        }
    }
}

/// Reference counts bucketed by cited grant year.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CitationTable {
    buckets: BTreeMap<i32, BTreeMap<String, u64>>,
    pub total_edges_in: u64,
    pub deduplicated_edges: u64,
    pub edges_dropped_missing_year: u64,
}

impl CitationTable {
    /// Table from already aggregated counts, one edge per counted reference.
    /// Zero counts and emptied years are discarded.
    pub fn from_buckets(buckets: BTreeMap<i32, BTreeMap<String, u64>>) -> Self {
        let buckets: BTreeMap<i32, BTreeMap<String, u64>> = buckets
            .into_iter()
            .map(|(year, b)| (year, b.into_iter().filter(|(_, n)| *n > 0).collect::<BTreeMap<_, _>>()))
            .filter(|(_, b)| !b.is_empty())
            .collect();
        let edges = buckets.values().flat_map(|b| b.values()).sum();
        CitationTable {
            buckets,
            total_edges_in: edges,
            deduplicated_edges: edges,
            edges_dropped_missing_year: 0,
        }
    }

    pub fn buckets(&self) -> &BTreeMap<i32, BTreeMap<String, u64>> {
        &self.buckets
    }

    pub fn year(&self, year: i32) -> Option<&BTreeMap<String, u64>> {
        self.buckets.get(&year)
    }

    pub fn is_empty(&self) -> bool {
        self.buckets.is_empty()
    }

    /// Edges that made it into a bucket.
    pub fn bucketed_edges(&self) -> u64 {
        self.buckets.values().flat_map(|b| b.values()).sum()
    }

    /// Number of distinct cited patents over all buckets.
    pub fn distinct_cited(&self) -> usize {
        self.buckets
            .values()
            .flat_map(|b| b.keys())
            .collect::<BTreeSet<_>>()
            .len()
    }

    /// Cited patents of one year, most referenced first, ties by id.
    pub fn ranked(&self, year: i32) -> Vec<(String, u64)> {
        let mut rows: Vec<(String, u64)> = self
            .year(year)
            .map(|b| b.iter().map(|(id, n)| (id.clone(), *n)).collect())
            .unwrap_or_default();
        rows.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        rows
    }

    pub fn stats(&self) -> TableStats {
        TableStats {
            total_edges_in: self.total_edges_in,
            deduplicated_edges: self.deduplicated_edges,
            edges_dropped_missing_year: self.edges_dropped_missing_year,
            bucketed_edges: self.bucketed_edges(),
            distinct_cited: self.distinct_cited() as u64,
        }
    }
}

/// Aggregation counters carried along with a spectrum.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TableStats {
    pub total_edges_in: u64,
    pub deduplicated_edges: u64,
    pub edges_dropped_missing_year: u64,
    pub bucketed_edges: u64,
    pub distinct_cited: u64,
}

/// Buckets citation edges by cited grant year, accepting years up to the
/// current calendar year.
pub fn build_citation_table(citations: &[CitationRecord]) -> Result<CitationTable, SpectrumError> {
    build_citation_table_until(citations, chrono::Utc::now().year())
}

/// Same as [`build_citation_table`] with an explicit latest admissible year.
///
/// A `(citing_id, cited_id)` pair counts once no matter how often it repeats.
/// If repeats disagree on the year, the first occurrence that carries one wins.
pub fn build_citation_table_until(
    citations: &[CitationRecord],
    latest_year: i32,
) -> Result<CitationTable, SpectrumError> {
    let mut pairs: HashMap<(&str, &str), Option<i32>> = HashMap::with_capacity(citations.len());

    for (index, record) in citations.iter().enumerate() {
        let reject = |reason: String| SpectrumError::InvalidRecord {
            index,
            citing_id: record.citing_id.clone(),
            cited_id: record.cited_id.clone(),
            reason,
        };
        if record.citing_id.is_empty() || record.cited_id.is_empty() {
            return Err(reject("empty patent id".into()));
        }
        if record.citing_id == record.cited_id {
            return Err(reject("patent cites itself".into()));
        }
        if let Some(year) = record.cited_grant_year {
            if !(EARLIEST_GRANT_YEAR..=latest_year).contains(&year) {
                return Err(reject(format!(
                    "cited grant year {year} outside [{EARLIEST_GRANT_YEAR}, {latest_year}]"
                )));
            }
        }

        let slot = pairs
            .entry((record.citing_id.as_str(), record.cited_id.as_str()))
            .or_insert(None);
        if slot.is_none() {
            *slot = record.cited_grant_year;
        }
    }

    let mut table = CitationTable {
        total_edges_in: citations.len() as u64,
        deduplicated_edges: pairs.len() as u64,
        ..CitationTable::default()
    };
    for ((_, cited), year) in pairs {
        match year {
            Some(year) => {
                *table
                    .buckets
                    .entry(year)
                    .or_default()
                    .entry(cited.to_string())
                    .or_insert(0) += 1;
            }
            None => table.edges_dropped_missing_year += 1,
        }
    }
    Ok(table)
}

/// One calendar year of the spectrum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumPoint {
    pub year: i32,
    /// All references to patents granted this year.
    pub c_total: u64,
    /// Median of `c_total` over the in-range part of the five-year window.
    pub median5: f64,
    /// Signed deviation `c_total - median5`.
    pub f: f64,
    pub top_patent_id: Option<String>,
    pub top_count: u64,
    /// `f` weighted by the top patent's share of the year.
    pub pcs: f64,
    /// Every id sharing `top_count`, present only when there is a tie.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub co_leaders: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Spectrum {
    pub points: Vec<SpectrumPoint>,
    pub query_provenance: Option<String>,
    pub stats: TableStats,
}

impl Spectrum {
    pub fn with_provenance(mut self, provenance: impl Into<String>) -> Self {
        self.query_provenance = Some(provenance.into());
        self
    }

    pub fn point(&self, year: i32) -> Option<&SpectrumPoint> {
        let first = self.points.first()?.year;
        let offset = usize::try_from(year.checked_sub(first)?).ok()?;
        self.points.get(offset)
    }
}

/// Median of a window of at most five counts; even windows average the
/// two middle values, which stays exact in `f64`.
fn window_median(window: &[u64]) -> f64 {
    debug_assert!(!window.is_empty() && window.len() <= 5);
    let mut buf = [0u64; 5];
    let buf = &mut buf[..window.len()];
    buf.copy_from_slice(window);
    buf.sort_unstable();
    let mid = buf.len() / 2;
    if buf.len() % 2 == 1 {
        buf[mid] as f64
    } else {
        (buf[mid - 1] as f64 + buf[mid] as f64) / 2.0
    }
}

/// Median of `series[i-2..=i+2]` clipped to the series bounds.
pub fn detrend_medians(series: &[u64]) -> Vec<f64> {
    let radius = WINDOW_RADIUS as usize;
    (0..series.len())
        .map(|i| {
            let lo = i.saturating_sub(radius);
            let hi = (i + radius).min(series.len() - 1);
            window_median(&series[lo..=hi])
        })
        .collect()
}

/// Dense per-year spectrum from the first to the last bucketed year. Years
/// inside that range without citations appear with `c_total = 0`.
pub fn compute_spectrum(table: &CitationTable) -> Result<Spectrum, SpectrumError> {
    let (Some(&first), Some(&last)) = (table.buckets.keys().next(), table.buckets.keys().next_back())
    else {
        return Err(SpectrumError::EmptyInput);
    };

    let years: Vec<i32> = (first..=last).collect();
    let totals: Vec<u64> = years
        .iter()
        .map(|y| table.year(*y).map_or(0, |b| b.values().sum()))
        .collect();
    let medians = detrend_medians(&totals);

    let points = years
        .iter()
        .zip(totals.iter().zip(medians))
        .map(|(&year, (&c_total, median5))| {
            let f = c_total as f64 - median5;
            let (top_patent_id, top_count, co_leaders) = leaders(table.year(year));
            let pcs = if c_total == 0 {
                0.0
            } else {
                f * top_count as f64 / c_total as f64
            };
            SpectrumPoint {
                year,
                c_total,
                median5,
                f,
                top_patent_id,
                top_count,
                pcs,
                co_leaders,
            }
        })
        .collect();

    Ok(Spectrum {
        points,
        query_provenance: None,
        stats: table.stats(),
    })
}

fn leaders(bucket: Option<&BTreeMap<String, u64>>) -> (Option<String>, u64, Vec<String>) {
    let Some(bucket) = bucket.filter(|b| !b.is_empty()) else {
        return (None, 0, Vec::new());
    };
    let top = *bucket.values().max().expect("nonempty bucket");
    // BTreeMap iteration is ordered, so the first tied id is the smallest.
    let tied: Vec<String> = bucket
        .iter()
        .filter(|(_, n)| **n == top)
        .map(|(id, _)| id.clone())
        .collect();
    let primary = tied[0].clone();
    let co_leaders = if tied.len() > 1 { tied } else { Vec::new() };
    (Some(primary), top, co_leaders)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunnerUp {
    pub year: i32,
    pub pcs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeminalResult {
    pub peak_year: i32,
    pub patent_id: String,
    pub peak_pcs: f64,
    pub peak_top_count: u64,
    pub runner_up_years: Vec<RunnerUp>,
    /// All ids at `peak_top_count` in the peak year, `patent_id` first.
    pub co_leaders: Vec<String>,
}

/// `pcs` as an exact fraction. `f` is an integer or half-integer, so
/// `2f * top / 2c` is a ratio of integers and peak ranking never depends on
/// floating-point rounding.
fn exact_pcs(point: &SpectrumPoint) -> (i128, i128) {
    if point.c_total == 0 {
        return (0, 1);
    }
    let twice_f = (point.f * 2.0).round() as i128;
    (twice_f * point.top_count as i128, 2 * point.c_total as i128)
}

fn cmp_pcs(a: &SpectrumPoint, b: &SpectrumPoint) -> Ordering {
    let (an, ad) = exact_pcs(a);
    let (bn, bd) = exact_pcs(b);
    (an * bd).cmp(&(bn * ad))
}

pub fn select_seminal(spectrum: &Spectrum) -> Result<SeminalResult, SpectrumError> {
    select_seminal_with(spectrum, DEFAULT_RUNNER_UPS)
}

/// Peak year is the argmax of `pcs` over years that have citations, earliest
/// year on ties. Runner-ups are the next `runner_ups` positive peaks.
pub fn select_seminal_with(
    spectrum: &Spectrum,
    runner_ups: usize,
) -> Result<SeminalResult, SpectrumError> {
    let mut candidates: Vec<&SpectrumPoint> = spectrum
        .points
        .iter()
        .filter(|p| p.c_total > 0 && p.top_patent_id.is_some())
        .collect();
    if candidates.is_empty() {
        return Err(SpectrumError::NoSignal);
    }
    candidates.sort_by(|a, b| cmp_pcs(b, a).then_with(|| a.year.cmp(&b.year)));

    let peak = candidates[0];
    let patent_id = peak.top_patent_id.clone().expect("filtered above");
    let co_leaders = if peak.co_leaders.is_empty() {
        vec![patent_id.clone()]
    } else {
        peak.co_leaders.clone()
    };
    let runner_up_years = candidates[1..]
        .iter()
        .filter(|p| exact_pcs(p).0 > 0)
        .take(runner_ups)
        .map(|p| RunnerUp {
            year: p.year,
            pcs: p.pcs,
        })
        .collect();

    Ok(SeminalResult {
        peak_year: peak.year,
        patent_id,
        peak_pcs: peak.pcs,
        peak_top_count: peak.top_count,
        runner_up_years,
        co_leaders,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(citing: &str, cited: &str, year: Option<i32>) -> CitationRecord {
        CitationRecord::new(citing, cited, year)
    }

    /// `counts[i]` distinct citers of one patent `P{year}` in `first + i`.
    fn table_from_series(first: i32, counts: &[u64]) -> CitationTable {
        let mut edges = Vec::new();
        for (i, &n) in counts.iter().enumerate() {
            let year = first + i as i32;
            for k in 0..n {
                edges.push(rec(&format!("C{year}-{k}"), &format!("P{year}"), Some(year)));
            }
        }
        build_citation_table_until(&edges, 2030).unwrap()
    }

    #[test]
    fn empty_input_gives_empty_table() {
        let table = build_citation_table(&[]).unwrap();
        assert!(table.is_empty());
        assert_eq!(table.total_edges_in, 0);
        assert_eq!(table.deduplicated_edges, 0);
        assert_eq!(table.edges_dropped_missing_year, 0);
    }

    #[test]
    fn duplicate_pair_counts_once() {
        let edges = [
            rec("A", "X", Some(1980)),
            rec("B", "X", Some(1980)),
            rec("A", "Y", Some(1981)),
            rec("A", "X", Some(1980)),
        ];
        let table = build_citation_table(&edges).unwrap();
        assert_eq!(table.total_edges_in, 4);
        assert_eq!(table.deduplicated_edges, 3);
        assert_eq!(table.year(1980).unwrap().get("X"), Some(&2));
        assert_eq!(table.year(1981).unwrap().get("Y"), Some(&1));
        assert_eq!(table.buckets().len(), 2);
    }

    #[test]
    fn missing_year_is_dropped_and_counted() {
        let edges = [rec("A", "X", None), rec("B", "X", Some(1999)), rec("A", "X", None)];
        let table = build_citation_table(&edges).unwrap();
        assert_eq!(table.deduplicated_edges, 2);
        assert_eq!(table.edges_dropped_missing_year, 1);
        assert_eq!(table.bucketed_edges(), 1);
    }

    #[test]
    fn duplicate_with_year_recovers_missing_one() {
        let edges = [rec("A", "X", None), rec("A", "X", Some(1999))];
        let table = build_citation_table(&edges).unwrap();
        assert_eq!(table.edges_dropped_missing_year, 0);
        assert_eq!(table.year(1999).unwrap().get("X"), Some(&1));
    }

    #[test]
    fn out_of_range_year_names_record() {
        let edges = [rec("A", "X", Some(1980)), rec("B", "Y", Some(1789))];
        let err = build_citation_table(&edges).unwrap_err();
        match err {
            SpectrumError::InvalidRecord { index, citing_id, .. } => {
                assert_eq!(index, 1);
                assert_eq!(citing_id, "B");
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(build_citation_table_until(&[rec("A", "X", Some(2031))], 2030).is_err());
    }

    #[test]
    fn self_citation_rejected() {
        assert!(matches!(
            build_citation_table(&[rec("A", "A", Some(1990))]),
            Err(SpectrumError::InvalidRecord { .. })
        ));
    }

    #[test]
    fn empty_table_has_no_spectrum() {
        let table = build_citation_table(&[rec("A", "X", None)]).unwrap();
        assert_eq!(compute_spectrum(&table), Err(SpectrumError::EmptyInput));
    }

    #[test]
    fn constant_series_has_zero_deviation() {
        let spectrum = compute_spectrum(&table_from_series(1970, &[5, 5, 5, 5, 5])).unwrap();
        assert!(spectrum.points.iter().all(|p| p.f == 0.0));
    }

    #[test]
    fn center_of_small_series() {
        // median{2,3,10,4,3} = 3 by sorting: 2,3,3,4,10
        let spectrum = compute_spectrum(&table_from_series(1980, &[2, 3, 10, 4, 3])).unwrap();
        let center = spectrum.point(1982).unwrap();
        assert_eq!(center.median5, 3.0);
        assert_eq!(center.f, 7.0);
    }

    #[test]
    fn dominance_weighting() {
        // Year 1982: 10 references, 6 of them to one patent.
        let mut edges = Vec::new();
        for (offset, n) in [(0, 2u64), (1, 3), (3, 4), (4, 3)] {
            let year = 1980 + offset;
            for k in 0..n {
                edges.push(rec(&format!("C{year}-{k}"), &format!("P{year}"), Some(year)));
            }
        }
        for k in 0..6 {
            edges.push(rec(&format!("D{k}"), "TOP", Some(1982)));
        }
        for k in 0..4 {
            edges.push(rec(&format!("E{k}"), &format!("OTHER{k}"), Some(1982)));
        }
        let table = build_citation_table(&edges).unwrap();
        let spectrum = compute_spectrum(&table).unwrap();
        let center = spectrum.point(1982).unwrap();
        assert_eq!(center.c_total, 10);
        assert_eq!(center.f, 7.0);
        assert_eq!(center.top_patent_id.as_deref(), Some("TOP"));
        assert_eq!(center.top_count, 6);
        assert!((center.pcs - 4.2).abs() < 1e-12);
    }

    #[test]
    fn single_patent_year_has_pcs_equal_f() {
        let spectrum = compute_spectrum(&table_from_series(2000, &[1, 2, 9, 1])).unwrap();
        for p in &spectrum.points {
            assert_eq!(p.pcs, p.f);
        }
    }

    #[test]
    fn boundary_windows_are_truncated() {
        // Windows: {1,4,9} {1,4,9,16} {1,4,9,16,25} {4,9,16,25} {9,16,25}
        let spectrum = compute_spectrum(&table_from_series(2000, &[1, 4, 9, 16, 25])).unwrap();
        let medians: Vec<f64> = spectrum.points.iter().map(|p| p.median5).collect();
        assert_eq!(medians, vec![4.0, 6.5, 9.0, 12.5, 16.0]);
    }

    #[test]
    fn gap_years_are_zero_filled() {
        let edges = [rec("A", "X", Some(1990)), rec("B", "Y", Some(1994))];
        let spectrum = compute_spectrum(&build_citation_table(&edges).unwrap()).unwrap();
        assert_eq!(spectrum.points.len(), 5);
        let gap = spectrum.point(1992).unwrap();
        assert_eq!(gap.c_total, 0);
        assert_eq!(gap.pcs, 0.0);
        assert!(gap.top_patent_id.is_none());
    }

    #[test]
    fn single_year_selects_its_top_patent() {
        let edges = [rec("A", "X", Some(1990)), rec("B", "X", Some(1990)), rec("C", "Y", Some(1990))];
        let spectrum = compute_spectrum(&build_citation_table(&edges).unwrap()).unwrap();
        let seminal = select_seminal(&spectrum).unwrap();
        assert_eq!(seminal.peak_year, 1990);
        assert_eq!(seminal.patent_id, "X");
        assert_eq!(seminal.peak_top_count, 2);
    }

    #[test]
    fn equal_peaks_pick_earliest_year() {
        let spectrum = compute_spectrum(&table_from_series(1990, &[1, 1, 6, 1, 1, 1, 6, 1, 1])).unwrap();
        assert_eq!(spectrum.point(1992).unwrap().pcs, spectrum.point(1996).unwrap().pcs);
        let seminal = select_seminal(&spectrum).unwrap();
        assert_eq!(seminal.peak_year, 1992);
        assert_eq!(seminal.runner_up_years[0].year, 1996);
    }

    #[test]
    fn tied_leaders_are_all_reported() {
        let edges = [
            rec("A", "Z9", Some(1990)),
            rec("B", "Z9", Some(1990)),
            rec("A", "M1", Some(1990)),
            rec("C", "M1", Some(1990)),
        ];
        let spectrum = compute_spectrum(&build_citation_table(&edges).unwrap()).unwrap();
        let seminal = select_seminal(&spectrum).unwrap();
        assert_eq!(seminal.patent_id, "M1");
        assert_eq!(seminal.co_leaders, vec!["M1".to_string(), "Z9".to_string()]);
    }

    #[test]
    fn all_zero_spectrum_is_no_signal() {
        let spectrum = Spectrum {
            points: vec![SpectrumPoint {
                year: 2000,
                c_total: 0,
                median5: 0.0,
                f: 0.0,
                top_patent_id: None,
                top_count: 0,
                pcs: 0.0,
                co_leaders: vec![],
            }],
            query_provenance: None,
            stats: TableStats::default(),
        };
        assert_eq!(select_seminal(&spectrum), Err(SpectrumError::NoSignal));
    }

    #[test]
    fn runner_ups_are_limited_and_descending() {
        let series = [1, 9, 1, 1, 7, 1, 1, 5, 1, 1, 3, 1];
        let spectrum = compute_spectrum(&table_from_series(1960, &series)).unwrap();
        let seminal = select_seminal_with(&spectrum, 2).unwrap();
        assert_eq!(seminal.peak_year, 1961);
        let years: Vec<i32> = seminal.runner_up_years.iter().map(|r| r.year).collect();
        assert_eq!(years, vec![1964, 1967]);
    }
}
