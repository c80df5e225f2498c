//! Provider response pages: decoding into [`PatentRecord`]s and, for
//! fixtures, encoding records back into the same shape.

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use super::{CitedRef, Party, PatentRecord};
use crate::patent::normalize_patent_id;

#[derive(Debug, Default, Serialize, Deserialize)]
pub struct WirePage {
    #[serde(default)]
    pub patents: Option<Vec<WirePatent>>,
    #[serde(default)]
    pub count: u64,
    #[serde(default)]
    pub total_patent_count: u64,
}

#[derive(Debug, Default, Serialize, Deserialize)]
pub struct WirePatent {
    pub patent_number: Option<String>,
    #[serde(default)]
    pub patent_title: Option<String>,
    #[serde(default)]
    pub patent_date: Option<String>,
    #[serde(default)]
    pub inventors: Option<Vec<WireInventor>>,
    #[serde(default)]
    pub assignees: Option<Vec<WireAssignee>>,
    #[serde(default)]
    pub cpcs: Option<Vec<WireCpc>>,
    #[serde(default)]
    pub cited_patents: Option<Vec<WireCited>>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
pub struct WireInventor {
    #[serde(default)]
    pub inventor_first_name: Option<String>,
    #[serde(default)]
    pub inventor_last_name: Option<String>,
    #[serde(default)]
    pub inventor_country: Option<String>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
pub struct WireAssignee {
    #[serde(default)]
    pub assignee_organization: Option<String>,
    #[serde(default)]
    pub assignee_country: Option<String>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
pub struct WireCpc {
    #[serde(default)]
    pub cpc_subgroup_id: Option<String>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
pub struct WireCited {
    #[serde(default)]
    pub cited_patent_number: Option<String>,
    #[serde(default)]
    pub cited_patent_date: Option<String>,
    #[serde(default)]
    pub cited_patent_title: Option<String>,
}

/// One decoded page: its records plus the provider's total for the query.
#[derive(Debug)]
pub struct DecodedPage {
    pub records: Vec<PatentRecord>,
    pub total: u64,
}

fn clean(value: Option<String>) -> Option<String> {
    value.map(|s| s.trim().to_string()).filter(|s| !s.is_empty())
}

fn country(value: Option<String>) -> Option<String> {
    clean(value).map(|c| c.to_ascii_uppercase())
}

fn parse_date(value: &str) -> Option<NaiveDate> {
    NaiveDate::parse_from_str(value.trim(), "%Y-%m-%d").ok()
}

pub fn decode_page(body: &str) -> Result<DecodedPage, String> {
    let page: WirePage = serde_json::from_str(body).map_err(|e| e.to_string())?;
    let mut records = Vec::new();
    for (i, patent) in page.patents.unwrap_or_default().into_iter().enumerate() {
        records.push(decode_patent(patent).map_err(|e| format!("record {}: {e}", i + 1))?);
    }
    Ok(DecodedPage {
        records,
        total: page.total_patent_count,
    })
}

fn decode_patent(patent: WirePatent) -> Result<PatentRecord, String> {
    let patent_id = clean(patent.patent_number)
        .map(|n| normalize_patent_id(&n))
        .ok_or("missing patent_number")?;
    let raw_date = clean(patent.patent_date).ok_or_else(|| format!("{patent_id}: missing patent_date"))?;
    let grant_date =
        parse_date(&raw_date).ok_or_else(|| format!("{patent_id}: unparseable patent_date `{raw_date}`"))?;

    let inventors = patent
        .inventors
        .unwrap_or_default()
        .into_iter()
        .filter_map(|inv| {
            let name = [clean(inv.inventor_first_name), clean(inv.inventor_last_name)]
                .into_iter()
                .flatten()
                .collect::<Vec<_>>()
                .join(" ");
            let country = country(inv.inventor_country);
            (!name.is_empty() || country.is_some()).then_some(Party { name, country })
        })
        .collect();

    let assignees = patent
        .assignees
        .unwrap_or_default()
        .into_iter()
        .filter_map(|a| {
            let name = clean(a.assignee_organization).unwrap_or_default();
            let country = country(a.assignee_country);
            (!name.is_empty() || country.is_some()).then_some(Party { name, country })
        })
        .collect();

    let mut cpc_subgroups: Vec<String> = patent
        .cpcs
        .unwrap_or_default()
        .into_iter()
        .filter_map(|c| clean(c.cpc_subgroup_id))
        .collect();
    cpc_subgroups.dedup();

    let cited = patent
        .cited_patents
        .unwrap_or_default()
        .into_iter()
        .filter_map(|c| {
            let id = clean(c.cited_patent_number).map(|n| normalize_patent_id(&n))?;
            Some(CitedRef {
                patent_id: id,
                grant_date: clean(c.cited_patent_date).as_deref().and_then(parse_date),
                title: clean(c.cited_patent_title),
            })
        })
        .collect();

    Ok(PatentRecord {
        patent_id,
        title: clean(patent.patent_title).unwrap_or_default(),
        grant_date,
        inventors,
        assignees,
        cpc_subgroups,
        cited,
    })
}

/// Encodes records as one provider page. `total` is the query's full count.
pub fn encode_page(records: &[PatentRecord], total: u64) -> String {
    let patents: Vec<WirePatent> = records.iter().map(encode_patent).collect();
    let page = WirePage {
        count: patents.len() as u64,
        patents: if patents.is_empty() { None } else { Some(patents) },
        total_patent_count: total,
    };
    serde_json::to_string(&page).expect("wire page serializes")
}

fn encode_patent(record: &PatentRecord) -> WirePatent {
    WirePatent {
        patent_number: Some(record.patent_id.clone()),
        patent_title: Some(record.title.clone()),
        patent_date: Some(record.grant_date.format("%Y-%m-%d").to_string()),
        inventors: Some(
            record
                .inventors
                .iter()
                .map(|p| {
                    let mut parts = p.name.splitn(2, ' ');
                    WireInventor {
                        inventor_first_name: parts.next().map(str::to_string),
                        inventor_last_name: parts.next().map(str::to_string),
                        inventor_country: p.country.clone(),
                    }
                })
                .collect(),
        ),
        assignees: Some(
            record
                .assignees
                .iter()
                .map(|p| WireAssignee {
                    assignee_organization: Some(p.name.clone()),
                    assignee_country: p.country.clone(),
                })
                .collect(),
        ),
        cpcs: Some(
            record
                .cpc_subgroups
                .iter()
                .map(|c| WireCpc {
                    cpc_subgroup_id: Some(c.clone()),
                })
                .collect(),
        ),
        cited_patents: Some(
            record
                .cited
                .iter()
                .map(|c| WireCited {
                    cited_patent_number: Some(c.patent_id.clone()),
                    cited_patent_date: c.grant_date.map(|d| d.format("%Y-%m-%d").to_string()),
                    cited_patent_title: c.title.clone(),
                })
                .collect(),
        ),
    }
}
