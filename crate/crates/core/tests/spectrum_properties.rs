use std::collections::{BTreeMap, HashMap};

use pcs_core::spectrum::{
    build_citation_table_until, compute_spectrum, select_seminal, CitationRecord, CitationTable,
};
use proptest::prelude::*;

/// Sort-and-pick median over the calendar years `t-2..=t+2` that exist in
/// `counts`, computed from a year-keyed map rather than slice offsets.
fn oracle_median(counts: &HashMap<i32, u64>, t: i32) -> f64 {
    let mut window: Vec<f64> = (t - 2..=t + 2)
        .filter_map(|y| counts.get(&y).map(|c| *c as f64))
        .collect();
    window.sort_by(f64::total_cmp);
    let n = window.len();
    if n % 2 == 1 {
        window[n / 2]
    } else {
        (window[n / 2 - 1] + window[n / 2]) / 2.0
    }
}

/// Series with nonzero endpoints, so the dense range is exactly the series.
fn dense_series() -> impl Strategy<Value = Vec<u64>> {
    prop::collection::vec(prop_oneof![Just(0u64), 0u64..=1_000_000], 1..=200).prop_map(|mut s| {
        let last = s.len() - 1;
        s[0] = s[0].max(1);
        s[last] = s[last].max(1);
        s
    })
}

fn single_patent_table(first: i32, series: &[u64]) -> CitationTable {
    let buckets = series
        .iter()
        .enumerate()
        .map(|(i, &c)| {
            let year = first + i as i32;
            (year, BTreeMap::from([(format!("P{year}"), c)]))
        })
        .collect();
    CitationTable::from_buckets(buckets)
}

/// Years with up to five patents each, counts 1..=60; some years empty.
fn multi_patent_table() -> impl Strategy<Value = CitationTable> {
    prop::collection::vec(prop::collection::vec(1u64..=60, 0..=5), 1..=60).prop_map(|years| {
        let buckets = years
            .into_iter()
            .enumerate()
            .map(|(i, counts)| {
                let year = 1900 + i as i32;
                let bucket = counts
                    .into_iter()
                    .enumerate()
                    .map(|(k, n)| (format!("{year}-{k}"), n))
                    .collect();
                (year, bucket)
            })
            .collect();
        CitationTable::from_buckets(buckets)
    })
    .prop_filter("nonempty", |t| !t.is_empty())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn median_matches_sort_and_pick_oracle(series in dense_series(), first in 1790i32..1900) {
        let spectrum = compute_spectrum(&single_patent_table(first, &series)).unwrap();
        let counts: HashMap<i32, u64> =
            series.iter().enumerate().map(|(i, c)| (first + i as i32, *c)).collect();
        prop_assert_eq!(spectrum.points.len(), series.len());
        for point in &spectrum.points {
            let expected = oracle_median(&counts, point.year);
            prop_assert_eq!(point.median5, expected, "year {}", point.year);
            prop_assert_eq!(point.f, counts[&point.year] as f64 - expected);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn shift_leaves_interior_deviation_unchanged(
        series in prop::collection::vec(1u64..=10_000, 5..=80),
        k in 1u64..=5_000,
    ) {
        let base = compute_spectrum(&single_patent_table(1950, &series)).unwrap();
        let shifted: Vec<u64> = series.iter().map(|c| c + k).collect();
        let moved = compute_spectrum(&single_patent_table(1950, &shifted)).unwrap();
        for (a, b) in base.points.iter().zip(&moved.points) {
            prop_assert_eq!(a.f, b.f);
            prop_assert_eq!(b.median5, a.median5 + k as f64);
        }
    }

    #[test]
    fn scaling_counts_scales_spectrum_and_keeps_seminal(table in multi_patent_table(), m in 2u64..=50) {
        let scaled = CitationTable::from_buckets(
            table
                .buckets()
                .iter()
                .map(|(y, b)| (*y, b.iter().map(|(id, n)| (id.clone(), n * m)).collect()))
                .collect(),
        );
        let a = compute_spectrum(&table).unwrap();
        let b = compute_spectrum(&scaled).unwrap();
        let mf = m as f64;
        for (p, q) in a.points.iter().zip(&b.points) {
            prop_assert_eq!(q.c_total, p.c_total * m);
            prop_assert_eq!(q.top_count, p.top_count * m);
            prop_assert_eq!(q.median5, p.median5 * mf);
            prop_assert_eq!(q.f, p.f * mf);
            prop_assert!((q.pcs - p.pcs * mf).abs() <= 1e-9 * (1.0 + q.pcs.abs()));
        }
        let sa = select_seminal(&a).unwrap();
        let sb = select_seminal(&b).unwrap();
        prop_assert_eq!(sa.peak_year, sb.peak_year);
        prop_assert_eq!(sa.patent_id, sb.patent_id);
    }

    #[test]
    fn dominance_weighting_bounds(table in multi_patent_table()) {
        let spectrum = compute_spectrum(&table).unwrap();
        let max_median = spectrum.points.iter().map(|p| p.median5).fold(0.0, f64::max);
        for p in &spectrum.points {
            prop_assert!(p.top_count <= p.c_total);
            prop_assert!(p.pcs.abs() <= p.f.abs());
            prop_assert!(p.f.abs() <= p.c_total as f64 + max_median);
            if p.c_total == 0 {
                prop_assert_eq!(p.pcs, 0.0);
                prop_assert!(p.top_patent_id.is_none());
            } else {
                prop_assert!(p.top_patent_id.is_some());
            }
            if p.c_total > 0 && p.top_count == p.c_total {
                prop_assert_eq!(p.pcs, p.f);
            }
        }
    }

    #[test]
    fn seminal_is_global_pcs_max(table in multi_patent_table()) {
        let spectrum = compute_spectrum(&table).unwrap();
        let seminal = select_seminal(&spectrum).unwrap();
        let best = spectrum
            .points
            .iter()
            .filter(|p| p.c_total > 0)
            .map(|p| p.pcs)
            .fold(f64::NEG_INFINITY, f64::max);
        prop_assert_eq!(seminal.peak_pcs, best);
        let earliest = spectrum.points.iter().find(|p| p.c_total > 0 && p.pcs == best).unwrap();
        prop_assert_eq!(seminal.peak_year, earliest.year);
        prop_assert_eq!(
            table.year(seminal.peak_year).unwrap().get(&seminal.patent_id),
            Some(&seminal.peak_top_count)
        );
        let mut prev = seminal.peak_pcs;
        for r in &seminal.runner_up_years {
            prop_assert!(r.pcs <= prev);
            prev = r.pcs;
        }
    }

    #[test]
    fn spectrum_serialization_is_deterministic(table in multi_patent_table()) {
        let a = serde_json::to_string(&compute_spectrum(&table).unwrap()).unwrap();
        let b = serde_json::to_string(&compute_spectrum(&table.clone()).unwrap()).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn deduplication_is_idempotent(
        edges in prop::collection::vec((0u8..20, 0u8..30, prop::option::weighted(0.9, 1950i32..2000)), 0..200)
    ) {
        let records: Vec<CitationRecord> = edges
            .into_iter()
            .map(|(citing, cited, year)| CitationRecord::new(format!("C{citing}"), format!("X{cited}"), year))
            .collect();
        let once = build_citation_table_until(&records, 2030).unwrap();
        let doubled: Vec<CitationRecord> = records.iter().chain(records.iter()).cloned().collect();
        let mut twice = build_citation_table_until(&doubled, 2030).unwrap();
        prop_assert_eq!(twice.total_edges_in, 2 * once.total_edges_in);
        twice.total_edges_in = once.total_edges_in;
        prop_assert_eq!(&twice, &once);
        prop_assert_eq!(
            once.bucketed_edges(),
            once.deduplicated_edges - once.edges_dropped_missing_year
        );
        prop_assert!(once.buckets().values().flat_map(|b| b.values()).all(|n| *n >= 1));
    }
}
