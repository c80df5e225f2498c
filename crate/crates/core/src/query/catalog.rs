//! Bundled catalog of provider fields usable in advanced criteria.

use std::collections::BTreeMap;
use std::sync::OnceLock;

use serde::Deserialize;

const BUNDLED: &str = include_str!("../../data/field_catalog.json");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FieldType {
    String,
    Fulltext,
    Date,
    Integer,
}

#[derive(Debug, Deserialize)]
struct RawCatalog {
    version: u32,
    max_per_page: u32,
    fields: Vec<RawField>,
}

#[derive(Debug, Deserialize)]
struct RawField {
    name: String,
    #[serde(rename = "type")]
    kind: FieldType,
}

#[derive(Debug, Clone)]
pub struct FieldCatalog {
    pub version: u32,
    pub max_per_page: u32,
    fields: BTreeMap<String, FieldType>,
}

impl FieldCatalog {
    pub fn bundled() -> &'static FieldCatalog {
        static CATALOG: OnceLock<FieldCatalog> = OnceLock::new();
        CATALOG.get_or_init(|| {
            let raw: RawCatalog =
                serde_json::from_str(BUNDLED).expect("bundled field catalog is valid JSON");
            FieldCatalog {
                version: raw.version,
                max_per_page: raw.max_per_page,
                fields: raw.fields.into_iter().map(|f| (f.name, f.kind)).collect(),
            }
        })
    }

    pub fn field_type(&self, name: &str) -> Option<FieldType> {
        self.fields.get(name).copied()
    }

    pub fn fields(&self) -> impl Iterator<Item = (&str, FieldType)> {
        self.fields.iter().map(|(k, v)| (k.as_str(), *v))
    }

    /// Up to three catalog fields closest to `name` by edit distance.
    pub fn nearest(&self, name: &str) -> Vec<String> {
        let mut scored: Vec<(f64, &str)> = self
            .fields
            .keys()
            .map(|f| (strsim::normalized_damerau_levenshtein(name, f), f.as_str()))
            .filter(|(score, _)| *score >= 0.5)
            .collect();
        scored.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| a.1.cmp(b.1)));
        scored.into_iter().take(3).map(|(_, f)| f.to_string()).collect()
    }
}
