//! Per-window location contexts and the LLM passes that fuse them.
//!
//! Map-derived context goes through the grid cache so each 100 m cell pays
//! for at most one vision call; SSID context is a lightweight text call.
//! Batches of consecutive windows are then refined into fused per-window
//! location texts, and ambiguous motion windows are calibrated against the
//! fused location. Every step degrades per window rather than failing a run:
//! a misbehaving reply costs one window its context, never the journal.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::Serialize;

use crate::geo::{build_map_request, CellMemo, ContextCache, GridKey, MapProvider, Projection};
use crate::llm::{template::ids, Gateway, GatewayError, LlmExchange, Role};
use crate::motion::{MotionContext, MotionLabel};

/// Placeholder text for windows with no usable location information.
pub const UNKNOWN_LOCATION: &str = "unknown";

/// How a window's fused location text was produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum FusedSource {
    /// From the batched refinement reply.
    Refined,
    /// Best-available single context after a refinement failure.
    Fallback,
    /// Window had no contexts at all.
    Unknown,
}

/// One window's location context material and outcome.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LocationContext {
    /// Epoch seconds.
    pub time: f64,
    pub map_text: Option<String>,
    pub ssid_text: Option<String>,
    pub fused_text: Option<String>,
    /// True when the map text came from the persistent cache.
    pub map_from_cache: bool,
    pub fused_source: Option<FusedSource>,
}

impl LocationContext {
    pub fn new(time: f64) -> Self {
        LocationContext {
            time,
            map_text: None,
            ssid_text: None,
            fused_text: None,
            map_from_cache: false,
            fused_source: None,
        }
    }

    pub fn has_context(&self) -> bool {
        self.map_text.is_some() || self.ssid_text.is_some()
    }

    /// Final location text for logs and journaling.
    pub fn render(&self) -> &str {
        self.fused_text
            .as_deref()
            .or(self.map_text.as_deref())
            .or(self.ssid_text.as_deref())
            .unwrap_or(UNKNOWN_LOCATION)
    }
}

/// One rendered context-log line: `[HH:MM](motion, location)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ContextLogEntry {
    pub time_label: String,
    pub motion_text: String,
    pub location_text: String,
}

impl ContextLogEntry {
    pub fn render(&self) -> String {
        format!(
            "[{}]({}, {})",
            self.time_label, self.motion_text, self.location_text
        )
    }
}

/// Resolver statistics for the run report.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ResolverStats {
    pub distinct_cells: usize,
    pub cache_hits: usize,
    pub map_provider_calls: usize,
    pub map_fallbacks: usize,
}

/// Map-context resolution: grid bucketing, persistent cache, map fetch, and
/// the vision call, with per-cell coalescing.
pub struct LocationResolver {
    projection: Projection,
    provider: Box<dyn MapProvider>,
    cache: Mutex<ContextCache>,
    memo: CellMemo<(String, bool)>,
    map_exchanges: Mutex<BTreeMap<GridKey, LlmExchange>>,
    cells_visited: Mutex<BTreeSet<GridKey>>,
    cache_hits: AtomicUsize,
    provider_calls: AtomicUsize,
    fallbacks: AtomicUsize,
}

impl LocationResolver {
    pub fn new(
        projection: Projection,
        provider: Box<dyn MapProvider>,
        cache: ContextCache,
    ) -> Self {
        LocationResolver {
            projection,
            provider,
            cache: Mutex::new(cache),
            memo: CellMemo::new(),
            map_exchanges: Mutex::new(BTreeMap::new()),
            cells_visited: Mutex::new(BTreeSet::new()),
            cache_hits: AtomicUsize::new(0),
            provider_calls: AtomicUsize::new(0),
            fallbacks: AtomicUsize::new(0),
        }
    }

    pub fn grid_key(&self, lat: f64, lon: f64) -> Option<GridKey> {
        self.projection.grid_key(lat, lon).ok()
    }

    /// Location context for a coordinate, via cache or the vision model.
    ///
    /// A cell resolves at most once per run: the persistent cache is
    /// consulted first, then the map is fetched and described. Provider
    /// failures and hallucinated replies leave the cell without a context
    /// for the rest of the run (counted as fallbacks) and are not cached, so
    /// a later run retries them.
    pub fn map_context(&self, gateway: &Gateway, lat: f64, lon: f64) -> Option<(String, bool)> {
        let key = match self.projection.grid_key(lat, lon) {
            Ok(key) => key,
            Err(_) => {
                self.fallbacks.fetch_add(1, Ordering::SeqCst);
                return None;
            }
        };
        self.cells_visited.lock().unwrap().insert(key);
        // The memoized value carries whether the text came from the
        // persistent cache, so every window in the cell reports the same
        // provenance.
        self.memo.get_or_compute(key, || {
            if let Some(cached) = self.cache.lock().unwrap().get(key) {
                self.cache_hits.fetch_add(1, Ordering::SeqCst);
                return Some((cached.to_string(), true));
            }
            let request = match build_map_request(&self.projection, lat, lon) {
                Ok(r) => r,
                Err(_) => {
                    self.fallbacks.fetch_add(1, Ordering::SeqCst);
                    return None;
                }
            };
            self.provider_calls.fetch_add(1, Ordering::SeqCst);
            let image = match self.provider.fetch(&request) {
                Ok(bytes) => bytes,
                Err(_) => {
                    self.fallbacks.fetch_add(1, Ordering::SeqCst);
                    return None;
                }
            };
            let exchange = match gateway.complete(
                Role::MapVlm,
                ids::MAP_CONTEXT,
                &HashMap::new(),
                Some(&image),
            ) {
                Ok(e) => e,
                Err(_) => {
                    self.fallbacks.fetch_add(1, Ordering::SeqCst);
                    return None;
                }
            };
            let summary = exchange.summary.clone();
            self.map_exchanges.lock().unwrap().insert(key, exchange);
            match summary {
                Some(text) => {
                    // Cache only successful descriptions.
                    let _ = self.cache.lock().unwrap().put(key, &text);
                    Some((text, false))
                }
                None => {
                    self.fallbacks.fetch_add(1, Ordering::SeqCst);
                    None
                }
            }
        })
    }

    pub fn stats(&self) -> ResolverStats {
        ResolverStats {
            distinct_cells: self.cells_visited.lock().unwrap().len(),
            cache_hits: self.cache_hits.load(Ordering::SeqCst),
            map_provider_calls: self.provider_calls.load(Ordering::SeqCst),
            map_fallbacks: self.fallbacks.load(Ordering::SeqCst),
        }
    }

    /// Vision exchanges keyed by cell, for deterministic transcript assembly.
    pub fn take_map_exchanges(&self) -> BTreeMap<GridKey, LlmExchange> {
        std::mem::take(&mut self.map_exchanges.lock().unwrap())
    }

    pub fn cache_len(&self) -> usize {
        self.cache.lock().unwrap().len()
    }
}

/// SSID-derived location context. An empty SSID list skips the call.
pub fn ssid_location_context(
    ssids: &[String],
    gateway: &Gateway,
) -> Result<(Option<String>, Option<LlmExchange>), GatewayError> {
    if ssids.is_empty() {
        return Ok((None, None));
    }
    let mut bindings = HashMap::new();
    bindings.insert("ssids", ssids.join(", "));
    let exchange = gateway.complete(Role::SsidLlm, ids::SSID_CONTEXT, &bindings, None)?;
    Ok((exchange.summary.clone(), Some(exchange)))
}

/// One refinement batch entry.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchEntry {
    pub time: f64,
    pub time_label: String,
    pub map_text: Option<String>,
    pub ssid_text: Option<String>,
}

impl BatchEntry {
    fn has_context(&self) -> bool {
        self.map_text.is_some() || self.ssid_text.is_some()
    }

    fn best_available(&self) -> Option<String> {
        self.map_text.clone().or_else(|| self.ssid_text.clone())
    }
}

/// Up to `n` consecutive windows with strictly increasing times.
#[derive(Debug, Clone, PartialEq)]
pub struct ContextBatch {
    pub entries: Vec<BatchEntry>,
}

/// Chunks windows into refinement batches of `n`, aligned to the start.
/// The final partial batch is kept as-is.
pub fn batch_entries(entries: Vec<BatchEntry>, n: usize) -> Vec<ContextBatch> {
    let n = n.max(1);
    let mut batches = Vec::new();
    let mut current: Vec<BatchEntry> = Vec::with_capacity(n);
    for entry in entries {
        debug_assert!(current.last().is_none_or(|prev| prev.time < entry.time));
        current.push(entry);
        if current.len() == n {
            batches.push(ContextBatch {
                entries: std::mem::take(&mut current),
            });
        }
    }
    if !current.is_empty() {
        batches.push(ContextBatch { entries: current });
    }
    batches
}

/// Outcome of refining one batch.
#[derive(Debug)]
pub struct RefinementOutcome {
    /// Fused text aligned with the batch entries; `None` for windows with no
    /// contexts.
    pub fused: Vec<Option<String>>,
    pub sources: Vec<FusedSource>,
    pub exchanges: Vec<LlmExchange>,
    /// True when the reply could not be used and best-available texts were
    /// substituted.
    pub fell_back: bool,
}

fn parse_fused_lines(summary: &str) -> Vec<(String, String)> {
    let mut out = Vec::new();
    for line in summary.lines() {
        let line = line.trim();
        if let Some(rest) = line.strip_prefix('[') {
            if let Some((label, tail)) = rest.split_once("](") {
                if let Some(text) = tail.strip_suffix(')') {
                    out.push((label.to_string(), text.trim().to_string()));
                }
            }
        }
    }
    out
}

fn is_time_label(label: &str) -> bool {
    label.len() == 5
        && label.as_bytes()[2] == b':'
        && label.bytes().enumerate().all(|(i, b)| {
            if i == 2 {
                b == b':'
            } else {
                b.is_ascii_digit()
            }
        })
}

/// Fuses a batch's map / SSID contexts into one location text per window.
///
/// Windows without any context are excluded from the prompt and come back as
/// `None` (rendered "unknown"). The reply must contain every prompted time
/// label exactly once; a malformed or hallucinated reply is retried once and
/// then each window falls back to its best available single context.
pub fn refine_locations(batch: &ContextBatch, gateway: &Gateway) -> RefinementOutcome {
    let eligible: Vec<(usize, &BatchEntry)> = batch
        .entries
        .iter()
        .enumerate()
        .filter(|(_, e)| e.has_context())
        .collect();

    let mut fused: Vec<Option<String>> = vec![None; batch.entries.len()];
    let mut sources: Vec<FusedSource> = vec![FusedSource::Unknown; batch.entries.len()];
    if eligible.is_empty() {
        return RefinementOutcome {
            fused,
            sources,
            exchanges: Vec::new(),
            fell_back: false,
        };
    }

    // Degenerate batch: one window, one context. Nothing to fuse.
    if batch.entries.len() == 1 {
        let entry = &batch.entries[0];
        if entry.map_text.is_some() != entry.ssid_text.is_some() {
            fused[0] = entry.best_available();
            sources[0] = FusedSource::Fallback;
            return RefinementOutcome {
                fused,
                sources,
                exchanges: Vec::new(),
                fell_back: false,
            };
        }
    }

    let logs: Vec<String> = eligible
        .iter()
        .map(|(_, e)| {
            format!(
                "[{}]({}, {})",
                e.time_label,
                e.map_text.as_deref().unwrap_or(UNKNOWN_LOCATION),
                e.ssid_text.as_deref().unwrap_or(UNKNOWN_LOCATION)
            )
        })
        .collect();
    let mut bindings = HashMap::new();
    bindings.insert("logs", logs.join("\n"));

    let mut exchanges = Vec::new();
    for _attempt in 0..2 {
        match gateway.complete(Role::MainLlm, ids::LOCATION_FUSION, &bindings, None) {
            Ok(exchange) => {
                let parsed = exchange.summary.as_deref().map(parse_fused_lines);
                exchanges.push(exchange);
                if let Some(lines) = parsed {
                    // Models sometimes echo the instruction's own bracketed
                    // placeholder lines; only time-labeled lines count.
                    let mut by_label: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
                    let mut time_lines = 0usize;
                    for (label, text) in &lines {
                        if is_time_label(label) {
                            time_lines += 1;
                            by_label
                                .entry(label.as_str())
                                .or_default()
                                .push(text.as_str());
                        }
                    }
                    let aligned = time_lines == eligible.len()
                        && eligible.iter().all(|(_, e)| {
                            by_label
                                .get(e.time_label.as_str())
                                .is_some_and(|v| v.len() == 1)
                        });
                    if aligned {
                        for (idx, entry) in &eligible {
                            fused[*idx] = Some(by_label[entry.time_label.as_str()][0].to_string());
                            sources[*idx] = FusedSource::Refined;
                        }
                        return RefinementOutcome {
                            fused,
                            sources,
                            exchanges,
                            fell_back: false,
                        };
                    }
                }
            }
            Err(_) => break,
        }
    }

    for (idx, entry) in &eligible {
        fused[*idx] = entry.best_available();
        sources[*idx] = FusedSource::Fallback;
    }
    RefinementOutcome {
        fused,
        sources,
        exchanges,
        fell_back: true,
    }
}

/// Outcome of calibrating one aligned span of windows.
#[derive(Debug)]
pub struct CalibrationOutcome {
    /// Final motion text per window.
    pub texts: Vec<String>,
    pub exchanges: Vec<LlmExchange>,
    /// Windows whose reply did not name a candidate and kept the raw list.
    pub fallbacks: usize,
}

/// Maps a calibration reply onto the candidate set, or `None` when it names
/// no candidate (or more than one).
fn match_candidate(summary: &str, candidates: &[MotionLabel]) -> Option<MotionLabel> {
    let s = summary
        .trim()
        .trim_matches(|c: char| c == '"' || c == '\'' || c == '.' || c == '`')
        .to_lowercase();
    if let Some(label) = candidates.iter().find(|l| l.as_str() == s) {
        return Some(*label);
    }
    // A candidate is named when the reply contains its text or any slash
    // segment of it ("being in a vehicle" names vehicle/subway/ferry/train).
    // Exactly one named candidate is an answer; zero or several is not.
    let named: Vec<&MotionLabel> = candidates
        .iter()
        .filter(|l| s.contains(l.as_str()) || l.as_str().split('/').any(|seg| s.contains(seg)))
        .collect();
    if named.len() == 1 {
        return Some(*named[0]);
    }
    None
}

/// Resolves ambiguous motion windows against their fused location context.
///
/// Unambiguous windows pass through without a call. For the rest the model
/// must answer with one of the window's own candidates; anything else keeps
/// the uncalibrated list.
pub fn calibrate_motions(
    motions: &[MotionContext],
    fused: &[Option<String>],
    time_labels: &[String],
    gateway: &Gateway,
) -> CalibrationOutcome {
    debug_assert_eq!(motions.len(), fused.len());
    debug_assert_eq!(motions.len(), time_labels.len());
    let mut texts = Vec::with_capacity(motions.len());
    let mut exchanges = Vec::new();
    let mut fallbacks = 0;
    for ((motion, fused_text), label) in motions.iter().zip(fused).zip(time_labels) {
        if motion.labels.len() <= 1 {
            texts.push(motion.render());
            continue;
        }
        let mut bindings = HashMap::new();
        bindings.insert("time", label.clone());
        bindings.insert(
            "candidates",
            motion
                .labels
                .iter()
                .map(|l| l.as_str())
                .collect::<Vec<_>>()
                .join(" | "),
        );
        bindings.insert(
            "location",
            fused_text
                .clone()
                .unwrap_or_else(|| UNKNOWN_LOCATION.to_string()),
        );
        match gateway.complete(Role::MainLlm, ids::MOTION_CALIBRATION, &bindings, None) {
            Ok(exchange) => {
                let choice = exchange
                    .summary
                    .as_deref()
                    .and_then(|s| match_candidate(s, &motion.labels));
                exchanges.push(exchange);
                match choice {
                    Some(label) => texts.push(label.as_str().to_string()),
                    None => {
                        fallbacks += 1;
                        texts.push(motion.render());
                    }
                }
            }
            Err(_) => {
                fallbacks += 1;
                texts.push(motion.render());
            }
        }
    }
    CalibrationOutcome {
        texts,
        exchanges,
        fallbacks,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::{PipelineMock, PromptCatalog, ProviderBinding, RetryPolicy, ScriptedProvider};

    fn gateway(provider: impl crate::llm::Provider + 'static, role: Role) -> Gateway {
        let mut gw = Gateway::new(
            PromptCatalog::default_catalog(),
            RetryPolicy {
                max_retries: 2,
                initial_backoff_ms: 1,
            },
            4,
        );
        gw.bind(
            role,
            ProviderBinding {
                model: "mock-1".into(),
                provider: Box::new(provider),
                live: false,
            },
        );
        gw
    }

    fn entry(time: f64, label: &str, map: Option<&str>, ssid: Option<&str>) -> BatchEntry {
        BatchEntry {
            time,
            time_label: label.to_string(),
            map_text: map.map(String::from),
            ssid_text: ssid.map(String::from),
        }
    }

    #[test]
    fn ssid_context_skips_empty_lists() {
        let gw = gateway(PipelineMock, Role::SsidLlm);
        let (text, exchange) = ssid_location_context(&[], &gw).unwrap();
        assert!(text.is_none() && exchange.is_none());
        assert!(gw.ledger().usage(ids::SSID_CONTEXT).is_none());
    }

    #[test]
    fn ssid_context_names_the_network() {
        let gw = gateway(PipelineMock, Role::SsidLlm);
        let ssids = vec!["Starbucks-Guest".to_string()];
        let (text, exchange) = ssid_location_context(&ssids, &gw).unwrap();
        assert!(text.unwrap().contains("Starbucks-Guest"));
        assert!(!exchange.unwrap().hallucinated);
    }

    #[test]
    fn ssid_hallucination_yields_absent_text() {
        let scripted = ScriptedProvider::new();
        scripted.push_response(ids::SSID_CONTEXT, "I cannot answer.");
        let gw = gateway(scripted, Role::SsidLlm);
        let ssids = vec!["Redmi 9A".to_string(), "SjFaHJ6echEs".to_string()];
        let (text, exchange) = ssid_location_context(&ssids, &gw).unwrap();
        assert!(text.is_none());
        assert!(exchange.unwrap().hallucinated);
    }

    #[test]
    fn batching_aligns_to_start_with_partial_tail() {
        let entries: Vec<BatchEntry> = (0..34)
            .map(|i| entry(i as f64 * 60.0, &format!("00:{i:02}"), Some("m"), None))
            .collect();
        let batches = batch_entries(entries, 15);
        assert_eq!(batches.len(), 3);
        assert_eq!(batches[0].entries.len(), 15);
        assert_eq!(batches[2].entries.len(), 4);
    }

    #[test]
    fn degenerate_single_entry_batch_skips_the_llm() {
        let gw = gateway(PipelineMock, Role::MainLlm);
        let batch = ContextBatch {
            entries: vec![entry(0.0, "09:00", Some("a beach"), None)],
        };
        let outcome = refine_locations(&batch, &gw);
        assert_eq!(outcome.fused[0].as_deref(), Some("a beach"));
        assert!(!outcome.fell_back);
        assert!(outcome.exchanges.is_empty());
        assert!(gw.ledger().usage(ids::LOCATION_FUSION).is_none());
    }

    #[test]
    fn refinement_aligns_by_timestamp() {
        let gw = gateway(PipelineMock, Role::MainLlm);
        let entries: Vec<BatchEntry> = (0..15)
            .map(|i| {
                entry(
                    i as f64 * 60.0,
                    &format!("09:{i:02}"),
                    Some("a residential block"),
                    Some("likely near Cafe Alpha Heritage"),
                )
            })
            .collect();
        let batch = ContextBatch { entries };
        let outcome = refine_locations(&batch, &gw);
        assert!(!outcome.fell_back);
        assert_eq!(outcome.fused.len(), 15);
        for (fused, source) in outcome.fused.iter().zip(&outcome.sources) {
            assert_eq!(fused.as_deref(), Some("likely near Cafe Alpha Heritage"));
            assert_eq!(*source, FusedSource::Refined);
        }
    }

    #[test]
    fn malformed_reply_retries_then_falls_back() {
        let scripted = ScriptedProvider::new();
        // 2 lines for 3 inputs, twice.
        scripted.push_response(ids::LOCATION_FUSION, "summary:\n[09:00](a)\n[09:01](b)");
        scripted.push_response(ids::LOCATION_FUSION, "summary:\n[09:00](a)\n[09:01](b)");
        let gw = gateway(scripted, Role::MainLlm);
        let entries = vec![
            entry(0.0, "09:00", Some("map a"), None),
            entry(60.0, "09:01", None, Some("ssid b")),
            entry(120.0, "09:02", Some("map c"), None),
        ];
        let outcome = refine_locations(&ContextBatch { entries }, &gw);
        assert!(outcome.fell_back);
        assert_eq!(outcome.exchanges.len(), 2);
        assert_eq!(outcome.fused[0].as_deref(), Some("map a"));
        assert_eq!(outcome.fused[1].as_deref(), Some("ssid b"));
        assert_eq!(outcome.fused[2].as_deref(), Some("map c"));
        assert!(outcome.sources.iter().all(|s| *s == FusedSource::Fallback));
    }

    #[test]
    fn zero_context_windows_stay_out_of_the_prompt() {
        let gw = gateway(PipelineMock, Role::MainLlm);
        let entries = vec![
            entry(0.0, "09:00", Some("map a"), None),
            entry(60.0, "09:01", None, None),
            entry(120.0, "09:02", Some("map c"), None),
        ];
        let outcome = refine_locations(&ContextBatch { entries }, &gw);
        assert!(outcome.fused[1].is_none());
        assert_eq!(outcome.sources[1], FusedSource::Unknown);
        assert!(!outcome.exchanges[0].prompt.contains("09:01"));
    }

    fn ambiguous(time: f64, labels: &[MotionLabel]) -> MotionContext {
        MotionContext {
            time,
            labels: labels.to_vec(),
            ambiguous: labels.len() != 1,
        }
    }

    #[test]
    fn unambiguous_windows_pass_through_without_calls() {
        let gw = gateway(PipelineMock, Role::MainLlm);
        let motions = vec![ambiguous(0.0, &[MotionLabel::Walking])];
        let outcome = calibrate_motions(&motions, &[None], &["09:00".into()], &gw);
        assert_eq!(outcome.texts, vec!["walking"]);
        assert!(outcome.exchanges.is_empty());
        assert_eq!(gw.ledger().total_calls(), 0);
    }

    #[test]
    fn highway_location_calibrates_to_vehicle() {
        let gw = gateway(PipelineMock, Role::MainLlm);
        let motions = vec![ambiguous(
            0.0,
            &[
                MotionLabel::Stationary,
                MotionLabel::VehicleSubwayFerryTrain,
            ],
        )];
        let fused = vec![Some("Hiram's Highway heading east".to_string())];
        let outcome = calibrate_motions(&motions, &fused, &["09:00".into()], &gw);
        assert_eq!(outcome.texts, vec!["vehicle/subway/ferry/train"]);
        assert_eq!(outcome.fallbacks, 0);
    }

    #[test]
    fn off_candidate_reply_falls_back_to_the_list() {
        let scripted = ScriptedProvider::new();
        scripted.push_response(ids::MOTION_CALIBRATION, "summary: levitating");
        let gw = gateway(scripted, Role::MainLlm);
        let motions = vec![ambiguous(
            0.0,
            &[MotionLabel::Walking, MotionLabel::Cycling],
        )];
        let outcome = calibrate_motions(&motions, &[None], &["09:00".into()], &gw);
        assert_eq!(outcome.texts, vec!["walking or cycling"]);
        assert_eq!(outcome.fallbacks, 1);
    }

    #[test]
    fn candidate_matching_rules() {
        let candidates = [MotionLabel::Walking, MotionLabel::VehicleSubwayFerryTrain];
        assert_eq!(
            match_candidate("walking", &candidates),
            Some(MotionLabel::Walking)
        );
        assert_eq!(
            match_candidate("being in a vehicle", &candidates),
            Some(MotionLabel::VehicleSubwayFerryTrain)
        );
        assert_eq!(
            match_candidate("\"vehicle/subway/ferry/train\"", &candidates),
            Some(MotionLabel::VehicleSubwayFerryTrain)
        );
        // Naming both candidates is no answer.
        assert_eq!(match_candidate("walking or vehicle", &candidates), None);
        assert_eq!(match_candidate("swimming", &candidates), None);
    }

    struct OneTileMap;
    impl MapProvider for OneTileMap {
        fn fetch(&self, _: &crate::geo::MapRequest) -> Result<Vec<u8>, crate::geo::GeoError> {
            Ok(b"tile-bytes".to_vec())
        }
    }

    fn resolver_with(dir: &std::path::Path) -> LocationResolver {
        LocationResolver::new(
            Projection::new(22.3),
            Box::new(OneTileMap),
            ContextCache::open(dir.join("cache.tsv")).unwrap(),
        )
    }

    #[test]
    fn map_context_cold_then_warm() {
        let dir = tempfile::tempdir().unwrap();
        let gw = gateway(PipelineMock, Role::MapVlm);
        {
            let resolver = resolver_with(dir.path());
            let (text, from_cache) = resolver.map_context(&gw, 22.3, 114.2).unwrap();
            assert!(!text.is_empty());
            assert!(!from_cache);
            // Second window in the same cell: memo hit, still one call.
            let again = resolver.map_context(&gw, 22.3001, 114.2001).unwrap();
            assert_eq!(again.0, text);
            assert_eq!(resolver.stats().map_provider_calls, 1);
            assert_eq!(resolver.cache_len(), 1);
        }
        // Fresh resolver over the same cache file: zero provider calls, and
        // every window in the cell reports cache provenance.
        let resolver = resolver_with(dir.path());
        let (_, from_cache) = resolver.map_context(&gw, 22.3, 114.2).unwrap();
        assert!(from_cache);
        let (_, from_cache) = resolver.map_context(&gw, 22.3001, 114.2001).unwrap();
        assert!(from_cache);
        assert_eq!(resolver.stats().map_provider_calls, 0);
        assert_eq!(gw.ledger().usage(ids::MAP_CONTEXT).unwrap().calls, 1);
    }

    #[test]
    fn hallucinated_map_reply_is_absent_and_uncached() {
        let dir = tempfile::tempdir().unwrap();
        let scripted = ScriptedProvider::new();
        scripted.push_response(ids::MAP_CONTEXT, "plain refusal");
        let gw = gateway(scripted, Role::MapVlm);
        let resolver = resolver_with(dir.path());
        assert!(resolver.map_context(&gw, 22.3, 114.2).is_none());
        assert_eq!(resolver.cache_len(), 0);
        assert_eq!(resolver.stats().map_fallbacks, 1);
        // The hallucinated exchange still reaches the transcript.
        assert_eq!(resolver.take_map_exchanges().len(), 1);
    }

    #[test]
    fn log_entry_renders_bracketed() {
        let e = ContextLogEntry {
            time_label: "09:00".into(),
            motion_text: "walking".into(),
            location_text: "beach".into(),
        };
        assert_eq!(e.render(), "[09:00](walking, beach)");
    }
}
