//! Summary extraction from raw model responses.
//!
//! Every prompt demands a response ending in a summary section. A reply the
//! summary cannot be extracted from is a hallucination — data, not an error.

/// Accepted summary section markers, matched case-insensitively.
const MARKERS: [&str; 3] = ["**summary**", "## summary", "summary:"];

/// Extracts the text after the final summary marker. Models often restate
/// the header, so the last marker wins. Returns `None` (hallucination) when
/// no marker is present or nothing follows it.
pub fn parse_summary(raw: &str) -> Option<String> {
    let lower = raw.to_lowercase();
    let mut best: Option<usize> = None;
    for marker in MARKERS {
        let mut from = 0;
        while let Some(pos) = lower[from..].find(marker) {
            let end = from + pos + marker.len();
            best = Some(best.map_or(end, |b: usize| b.max(end)));
            from = end;
        }
    }
    let start = best?;
    let text = raw[start..]
        .trim_start_matches([':', '*', ' '])
        .trim()
        .to_string();
    if text.is_empty() {
        None
    } else {
        Some(text)
    }
}
