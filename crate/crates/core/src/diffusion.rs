//! Country-by-year spread of the patents citing one target patent.

use std::collections::{BTreeMap, BTreeSet, HashSet};

use chrono::Datelike;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::client::PatentRecord;
use crate::patent::normalize_patent_id;

/// Country key for inventors or patents without a reported country.
pub const UNKNOWN_COUNTRY: &str = "unknown";

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum DiffusionError {
    #[error("patent {citer} does not cite {target}")]
    NotACiter { citer: String, target: String },
    #[error("citing patent {0} listed more than once")]
    DuplicateCiter(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiffusionCell {
    pub year: i32,
    pub country: String,
    pub citing_patents: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiffusionProfile {
    pub target_patent_id: String,
    /// Whole counting: a patent adds 1 to each distinct inventor country.
    /// Sorted by year, then country.
    pub cells: Vec<DiffusionCell>,
    /// Inventor instances per country.
    pub inventor_tallies: BTreeMap<String, u64>,
    /// Assignee (applicant) instances per country, for assignees that carry one.
    pub applicant_tallies: BTreeMap<String, u64>,
    pub citing_patents: u64,
    pub inventor_instances: u64,
    pub applicant_instances: u64,
}

pub fn build_profile(target: &str, citers: &[PatentRecord]) -> Result<DiffusionProfile, DiffusionError> {
    let target = normalize_patent_id(target);
    let mut seen = HashSet::new();
    let mut cells: BTreeMap<(i32, String), u64> = BTreeMap::new();
    let mut inventor_tallies: BTreeMap<String, u64> = BTreeMap::new();
    let mut applicant_tallies: BTreeMap<String, u64> = BTreeMap::new();

    for citer in citers {
        if !citer.cites(&target) {
            return Err(DiffusionError::NotACiter {
                citer: citer.patent_id.clone(),
                target,
            });
        }
        if !seen.insert(citer.patent_id.as_str()) {
            return Err(DiffusionError::DuplicateCiter(citer.patent_id.clone()));
        }

        let year = citer.grant_date.year();
        let mut countries = BTreeSet::new();
        for inventor in &citer.inventors {
            let country = inventor.country.as_deref().unwrap_or(UNKNOWN_COUNTRY);
            *inventor_tallies.entry(country.to_string()).or_insert(0) += 1;
            countries.insert(country);
        }
        if countries.is_empty() {
            countries.insert(UNKNOWN_COUNTRY);
        }
        for country in countries {
            *cells.entry((year, country.to_string())).or_insert(0) += 1;
        }
        for assignee in &citer.assignees {
            if let Some(country) = &assignee.country {
                *applicant_tallies.entry(country.clone()).or_insert(0) += 1;
            }
        }
    }

    Ok(DiffusionProfile {
        target_patent_id: target,
        cells: cells
            .into_iter()
            .map(|((year, country), citing_patents)| DiffusionCell {
                year,
                country,
                citing_patents,
            })
            .collect(),
        inventor_instances: inventor_tallies.values().sum(),
        applicant_instances: applicant_tallies.values().sum(),
        inventor_tallies,
        applicant_tallies,
        citing_patents: seen.len() as u64,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CountryShare {
    pub country: String,
    pub inventors: u64,
    pub share: f64,
    /// First and last grant year of a citing patent with an inventor here.
    pub first_year: Option<i32>,
    pub last_year: Option<i32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApplicantShare {
    pub country: String,
    pub applicants: u64,
    pub share: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiffusionSummary {
    pub inventor_shares: Vec<CountryShare>,
    /// Empty when no assignee reported a country.
    pub applicant_shares: Vec<ApplicantShare>,
}

/// Per-country shares, largest first (ties by country code).
pub fn profile_summary(profile: &DiffusionProfile) -> DiffusionSummary {
    let mut spans: BTreeMap<&str, (i32, i32)> = BTreeMap::new();
    for cell in &profile.cells {
        spans
            .entry(cell.country.as_str())
            .and_modify(|(lo, hi)| {
                *lo = (*lo).min(cell.year);
                *hi = (*hi).max(cell.year);
            })
            .or_insert((cell.year, cell.year));
    }

    let mut inventor_shares: Vec<CountryShare> = profile
        .inventor_tallies
        .iter()
        .filter(|(_, n)| **n > 0)
        .map(|(country, n)| {
            let span = spans.get(country.as_str());
            CountryShare {
                country: country.clone(),
                inventors: *n,
                share: *n as f64 / profile.inventor_instances as f64,
                first_year: span.map(|s| s.0),
                last_year: span.map(|s| s.1),
            }
        })
        .collect();
    inventor_shares.sort_by(|a, b| b.inventors.cmp(&a.inventors).then_with(|| a.country.cmp(&b.country)));

    let mut applicant_shares: Vec<ApplicantShare> = profile
        .applicant_tallies
        .iter()
        .filter(|(_, n)| **n > 0)
        .map(|(country, n)| ApplicantShare {
            country: country.clone(),
            applicants: *n,
            share: *n as f64 / profile.applicant_instances as f64,
        })
        .collect();
    applicant_shares.sort_by(|a, b| b.applicants.cmp(&a.applicants).then_with(|| a.country.cmp(&b.country)));

    DiffusionSummary {
        inventor_shares,
        applicant_shares,
    }
}
