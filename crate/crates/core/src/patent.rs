//! Patent identifiers.

/// Canonical form of a US patent number: no `US` prefix, no separators,
/// uppercase, leading zeros of purely numeric ids removed.
///
/// `"US4,335,266"`, `"us 4335266"` and `"04335266"` all map to `"4335266"`.
pub fn normalize_patent_id(raw: &str) -> String {
    let compact: String = raw
        .trim()
        .chars()
        .filter(|c| !matches!(c, ',' | ' ' | '-' | '/'))
        .collect::<String>()
        .to_ascii_uppercase();
    let body = compact.strip_prefix("US").unwrap_or(&compact);
    if !body.is_empty() && body.bytes().all(|b| b.is_ascii_digit()) {
        let trimmed = body.trim_start_matches('0');
        if trimmed.is_empty() {
            "0".to_string()
        } else {
            trimmed.to_string()
        }
    } else {
        body.to_string()
    }
}

/// Display form used by renderers, e.g. `US4335266`.
pub fn display_patent_id(id: &str) -> String {
    format!("US{id}")
}
