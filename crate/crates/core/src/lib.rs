//! Patent citation spectroscopy.
//!
//! Cited references of a retrieved patent set are bucketed by the grant year of
//! the cited patent, de-trended against a five-year running median and weighted
//! by how much of each year is owned by its single most-cited patent. The year
//! with the strongest weighted peak points at the foundational patent of the
//! technology area. The crate also covers the plumbing around that computation:
//! query parsing, a paginated provider client with record/replay, a
//! content-addressed snapshot store, and citing-patent diffusion profiles.

pub mod canonical;
pub mod client;
pub mod diffusion;
pub mod patent;
pub mod query;
pub mod report;
pub mod snapshot;
pub mod spectrum;

#[cfg(any(test, feature = "test-util"))]
pub mod testing;

pub use client::{FetchPolicy, PatentRecord, PatentsViewClient, RetrievalResult};
pub use diffusion::{build_profile, profile_summary, DiffusionProfile};
pub use query::{parse_advanced, parse_keyword, to_request, Query, QueryNode};
pub use snapshot::{Snapshot, SnapshotStore};
pub use spectrum::{
    build_citation_table, compute_spectrum, select_seminal, CitationRecord, CitationTable,
    SeminalResult, Spectrum, SpectrumPoint,
};
