//! Content-addressed snapshot store.
//!
//! Layout under the store root:
//!
//! ```text
//! <root>/index.json
//! <root>/<id>/meta.json
//! <root>/<id>/pages/<n>.json
//! <root>/<id>/normalized.json
//! ```
//!
//! `id` is the SHA-256 of the canonical request body. `meta.json` also holds a
//! digest of every page and of `normalized.json`; [`SnapshotStore::get`]
//! re-hashes all of them, so any edited, truncated or missing file is
//! reported as corruption instead of being served.
//!
//! Writes go to a hidden staging directory that is renamed into place, so a
//! reader never observes a half-written snapshot. Hidden entries are ignored.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub const FORMAT_VERSION: u32 = 1;
const META: &str = "meta.json";
const NORMALIZED: &str = "normalized.json";
const PAGES: &str = "pages";
const INDEX: &str = "index.json";
const MIN_PREFIX: usize = 6;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("no snapshot `{id}` in the store")]
    CacheMiss { id: String },
    #[error("snapshot {id} is corrupt: {detail}")]
    Corrupt { id: String, detail: String },
    #[error("snapshot id {claimed} does not match the hash of its request body ({actual})")]
    Integrity { claimed: String, actual: String },
    #[error("snapshot format version {found} is not readable by this build (expected {FORMAT_VERSION})")]
    UnsupportedVersion { found: u32 },
    #[error("snapshot prefix `{prefix}` is ambiguous ({count} matches)")]
    Ambiguous { prefix: String, count: usize },
    #[error("cannot persist {}: {source}", .path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> StoreError + '_ {
    move |source| StoreError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Hex SHA-256 of `text`; the snapshot id of a canonical request body.
pub fn content_id(text: &str) -> String {
    hex::encode(Sha256::digest(text.as_bytes()))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Snapshot {
    pub id: String,
    pub created_at: DateTime<Utc>,
    /// Canonical request body of the first page.
    pub query_text: String,
    /// Raw provider responses, page 1 first.
    pub pages: Vec<String>,
    /// Canonical serialization of the normalized retrieval.
    pub normalized: String,
    pub format_version: u32,
}

impl Snapshot {
    pub fn new(
        query_text: String,
        created_at: DateTime<Utc>,
        pages: Vec<String>,
        normalized: String,
    ) -> Self {
        Snapshot {
            id: content_id(&query_text),
            created_at,
            query_text,
            pages,
            normalized,
            format_version: FORMAT_VERSION,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct Meta {
    id: String,
    created_at: DateTime<Utc>,
    query_text: String,
    format_version: u32,
    page_digests: Vec<String>,
    normalized_digest: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SnapshotSummary {
    pub id: String,
    pub created_at: DateTime<Utc>,
    pub query_text: String,
    pub page_count: usize,
    pub format_version: u32,
}

#[derive(Debug, Clone)]
pub struct SnapshotStore {
    root: PathBuf,
}

impl SnapshotStore {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        SnapshotStore { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// Persists `snapshot`; a no-op when identical content is already stored.
    pub fn put(&self, snapshot: &Snapshot) -> Result<String, StoreError> {
        let actual = content_id(&snapshot.query_text);
        if actual != snapshot.id {
            return Err(StoreError::Integrity {
                claimed: snapshot.id.clone(),
                actual,
            });
        }
        if snapshot.format_version != FORMAT_VERSION {
            return Err(StoreError::UnsupportedVersion {
                found: snapshot.format_version,
            });
        }
        let target = self.root.join(&snapshot.id);
        if target.exists() {
            if let Ok(existing) = self.get(&snapshot.id) {
                if existing == *snapshot {
                    return Ok(snapshot.id.clone());
                }
            }
        }

        fs::create_dir_all(&self.root).map_err(io_err(&self.root))?;
        let staging = self.root.join(format!(".tmp-{}-{}", snapshot.id, unique_suffix()));
        if let Err(err) = write_snapshot_dir(&staging, snapshot) {
            let _ = fs::remove_dir_all(&staging);
            return Err(err);
        }

        if target.exists() {
            let retired = self.root.join(format!(".old-{}-{}", snapshot.id, unique_suffix()));
            fs::rename(&target, &retired).map_err(io_err(&target))?;
            fs::rename(&staging, &target).map_err(io_err(&target))?;
            let _ = fs::remove_dir_all(&retired);
        } else {
            fs::rename(&staging, &target).map_err(io_err(&target))?;
        }
        self.write_index()?;
        Ok(snapshot.id.clone())
    }

    /// Loads a snapshot by full id or unique prefix, verifying every digest.
    pub fn get(&self, id: &str) -> Result<Snapshot, StoreError> {
        let id = self.resolve(id)?;
        let dir = self.root.join(&id);
        let corrupt = |detail: String| StoreError::Corrupt {
            id: id.clone(),
            detail,
        };

        let meta_text = fs::read_to_string(dir.join(META))
            .map_err(|e| corrupt(format!("{META}: {e}")))?;
        let meta: Meta =
            serde_json::from_str(&meta_text).map_err(|e| corrupt(format!("{META}: {e}")))?;
        if meta.format_version != FORMAT_VERSION {
            return Err(StoreError::UnsupportedVersion {
                found: meta.format_version,
            });
        }
        if meta.id != id || content_id(&meta.query_text) != id {
            return Err(corrupt("request body does not hash to the snapshot id".into()));
        }

        let mut pages = Vec::with_capacity(meta.page_digests.len());
        for (i, expected) in meta.page_digests.iter().enumerate() {
            let name = page_file(i + 1);
            let body = fs::read(dir.join(PAGES).join(&name))
                .map_err(|e| corrupt(format!("page {} ({PAGES}/{name}): {e}", i + 1)))?;
            if hex::encode(Sha256::digest(&body)) != *expected {
                return Err(corrupt(format!(
                    "page {} ({PAGES}/{name}) does not match its recorded digest",
                    i + 1
                )));
            }
            let body = String::from_utf8(body)
                .map_err(|_| corrupt(format!("page {} is not UTF-8", i + 1)))?;
            pages.push(body);
        }

        let normalized = fs::read(dir.join(NORMALIZED))
            .map_err(|e| corrupt(format!("{NORMALIZED}: {e}")))?;
        if hex::encode(Sha256::digest(&normalized)) != meta.normalized_digest {
            return Err(corrupt(format!("{NORMALIZED} does not match its recorded digest")));
        }
        let normalized =
            String::from_utf8(normalized).map_err(|_| corrupt(format!("{NORMALIZED} is not UTF-8")))?;

        Ok(Snapshot {
            id,
            created_at: meta.created_at,
            query_text: meta.query_text,
            pages,
            normalized,
            format_version: meta.format_version,
        })
    }

    /// Stored snapshots, newest first. Directories without a readable
    /// `meta.json` are skipped.
    pub fn list(&self) -> Result<Vec<SnapshotSummary>, StoreError> {
        let mut out = Vec::new();
        for id in self.ids()? {
            let Ok(text) = fs::read_to_string(self.root.join(&id).join(META)) else {
                continue;
            };
            let Ok(meta) = serde_json::from_str::<Meta>(&text) else {
                continue;
            };
            out.push(SnapshotSummary {
                id: meta.id,
                created_at: meta.created_at,
                query_text: meta.query_text,
                page_count: meta.page_digests.len(),
                format_version: meta.format_version,
            });
        }
        out.sort_by(|a, b| b.created_at.cmp(&a.created_at).then_with(|| a.id.cmp(&b.id)));
        Ok(out)
    }

    /// Expands an id prefix to the single matching stored id.
    pub fn resolve(&self, prefix: &str) -> Result<String, StoreError> {
        let prefix = prefix.trim().to_ascii_lowercase();
        let ids = self.ids()?;
        if ids.contains(&prefix) {
            return Ok(prefix);
        }
        let matches: Vec<&String> = if prefix.len() >= MIN_PREFIX {
            ids.iter().filter(|id| id.starts_with(&prefix)).collect()
        } else {
            Vec::new()
        };
        match matches.as_slice() {
            [one] => Ok((*one).clone()),
            [] => Err(StoreError::CacheMiss { id: prefix }),
            many => Err(StoreError::Ambiguous {
                prefix,
                count: many.len(),
            }),
        }
    }

    fn ids(&self) -> Result<Vec<String>, StoreError> {
        let entries = match fs::read_dir(&self.root) {
            Ok(entries) => entries,
            Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(Vec::new()),
            Err(e) => return Err(io_err(&self.root)(e)),
        };
        let mut ids = Vec::new();
        for entry in entries {
            let entry = entry.map_err(io_err(&self.root))?;
            let name = entry.file_name().to_string_lossy().into_owned();
            if name.starts_with('.') || !entry.path().is_dir() {
                continue;
            }
            ids.push(name);
        }
        ids.sort();
        Ok(ids)
    }

    fn write_index(&self) -> Result<(), StoreError> {
        let summaries = self.list()?;
        let text = serde_json::to_string_pretty(&summaries).expect("summaries serialize");
        let staging = self.root.join(format!(".{INDEX}.{}", unique_suffix()));
        write_file(&staging, text.as_bytes())?;
        let index = self.root.join(INDEX);
        fs::rename(&staging, &index).map_err(io_err(&index))
    }
}

fn page_file(n: usize) -> String {
    format!("{n}.json")
}

fn unique_suffix() -> String {
    let nanos = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_nanos())
        .unwrap_or_default();
    format!("{}-{nanos}", std::process::id())
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), StoreError> {
    let mut file = fs::File::create(path).map_err(io_err(path))?;
    file.write_all(bytes).map_err(io_err(path))?;
    file.sync_all().map_err(io_err(path))
}

fn write_snapshot_dir(dir: &Path, snapshot: &Snapshot) -> Result<(), StoreError> {
    let pages_dir = dir.join(PAGES);
    fs::create_dir_all(&pages_dir).map_err(io_err(&pages_dir))?;
    let mut page_digests = Vec::with_capacity(snapshot.pages.len());
    for (i, body) in snapshot.pages.iter().enumerate() {
        write_file(&pages_dir.join(page_file(i + 1)), body.as_bytes())?;
        page_digests.push(content_id(body));
    }
    write_file(&dir.join(NORMALIZED), snapshot.normalized.as_bytes())?;
    let meta = Meta {
        id: snapshot.id.clone(),
        created_at: snapshot.created_at,
        query_text: snapshot.query_text.clone(),
        format_version: snapshot.format_version,
        page_digests,
        normalized_digest: content_id(&snapshot.normalized),
    };
    let text = serde_json::to_string_pretty(&meta).expect("meta serializes");
    write_file(&dir.join(META), text.as_bytes())
}
