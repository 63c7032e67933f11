//! End-to-end orchestration: trace in, journals and audit artifacts out.
//!
//! The run proceeds in layers. Windows are detected in parallel under the
//! configured in-flight bound; refinement and calibration run per batch;
//! journaling runs per horizon. All provider results are pure functions of
//! their requests under replay/mock providers, and the transcript is
//! assembled in a data-derived order, so a run's outputs are byte-stable.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use num_rational::Ratio;
use serde::Serialize;
use thiserror::Error;

use crate::config::{MapProviderKind, ProviderConfig, RunConfig};
use crate::context::{
    batch_entries, calibrate_motions, refine_locations, ssid_location_context, BatchEntry,
    ContextLogEntry, LocationContext, LocationResolver, ResolverStats,
};
use crate::geo::{ContextCache, GridKey, MapProvider, Projection};
use crate::journal::{baseline_journal, journal_for_horizon, Journal, JournalError};
use crate::llm::ledger::{ledger_report, LedgerError, LedgerReport, Money};
use crate::llm::{Gateway, LlmExchange};
use crate::motion::{detect_motion, MotionContext};
use crate::trace::{
    extract_features, format_hhmm, segment_duty_cycle, SensorBurst, WindowFeatures,
};

#[derive(Debug, Error)]
pub enum RunError {
    #[error("trace produced no usable windows")]
    EmptyTrace,
    #[error(transparent)]
    Journal(#[from] JournalError),
    #[error(transparent)]
    Ledger(#[from] LedgerError),
    #[error("output io: {0}")]
    Io(#[from] std::io::Error),
}

/// Which engine to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RunMode {
    Pipeline,
    Baseline,
}

impl std::str::FromStr for RunMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "pipeline" => Ok(RunMode::Pipeline),
            "baseline" => Ok(RunMode::Baseline),
            other => Err(format!("unknown mode {other}; expected pipeline|baseline")),
        }
    }
}

/// Non-path configuration echo for the run report.
#[derive(Debug, Clone, Serialize)]
pub struct ConfigEcho {
    pub duty_collect_seconds: f64,
    pub duty_period_seconds: f64,
    pub batch_size: usize,
    pub horizon_seconds: f64,
    pub utc_offset_minutes: i32,
    pub sampling_stride: usize,
    pub max_in_flight: usize,
    pub retry_max: u32,
    pub retry_backoff_ms: u64,
    pub map_provider: MapProviderKind,
    pub providers: BTreeMap<String, ProviderConfig>,
}

impl ConfigEcho {
    fn from_config(cfg: &RunConfig) -> Self {
        ConfigEcho {
            duty_collect_seconds: cfg.duty.collect_duration_t,
            duty_period_seconds: cfg.duty.period_big_t,
            batch_size: cfg.batch_size,
            horizon_seconds: cfg.horizon_seconds,
            utc_offset_minutes: cfg.utc_offset_minutes,
            sampling_stride: cfg.sampling_stride,
            max_in_flight: cfg.max_in_flight,
            retry_max: cfg.retry.max_retries,
            retry_backoff_ms: cfg.retry.initial_backoff_ms,
            map_provider: cfg.map_provider,
            providers: cfg.providers.clone(),
        }
    }
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct FallbackCounts {
    /// Windows whose map context failed (provider error or hallucination).
    pub map_context_windows: usize,
    /// Windows whose SSID call failed at the gateway.
    pub ssid_windows: usize,
    /// Batches that fell back to best-available contexts.
    pub refinement_batches: usize,
    /// Ambiguous windows that kept their raw label list.
    pub calibration_windows: usize,
    /// Horizons whose cleaning reply hallucinated (draft kept).
    pub cleaning_horizons: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct HorizonReport {
    pub index: usize,
    pub start: f64,
    pub end: f64,
    pub label: String,
    pub windows: usize,
    pub hallucinated: bool,
    pub cleaning_fallback: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub exchange_ids: Vec<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunReport {
    pub mode: RunMode,
    pub config: ConfigEcho,
    pub windows: usize,
    pub windows_skipped: usize,
    pub segmentation_warnings: Vec<String>,
    pub horizons: Vec<HorizonReport>,
    /// Hallucinated journals / attempted journals.
    pub hallucination_rate: f64,
    pub fallbacks: FallbackCounts,
    pub grid: ResolverStats,
    pub ledger: LedgerReport,
}

/// Everything a run produces, in memory.
pub struct RunOutput {
    pub mode: RunMode,
    pub journals: Vec<Journal>,
    pub transcript: Vec<LlmExchange>,
    pub context_log: Vec<ContextLogEntry>,
    pub report: RunReport,
}

struct WindowDetection {
    features: WindowFeatures,
    motion: MotionContext,
    location: LocationContext,
    ssid_exchange: Option<LlmExchange>,
    grid: Option<GridKey>,
}

/// Bounded parallel map with index-stable results.
fn parallel_map<T: Send, F: Fn(usize) -> T + Sync>(n: usize, workers: usize, f: F) -> Vec<T> {
    let slots: Vec<Mutex<Option<T>>> = (0..n).map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    let workers = workers.max(1).min(n.max(1));
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= n {
                    break;
                }
                let value = f(i);
                *slots[i].lock().unwrap() = Some(value);
            });
        }
    });
    slots
        .into_iter()
        .map(|m| m.into_inner().unwrap().expect("worker filled slot"))
        .collect()
}

/// Latitude of the first accurate GPS fix in the trace, if any.
pub fn reference_latitude(bursts: &[SensorBurst]) -> Option<f64> {
    bursts
        .iter()
        .flat_map(|b| b.gps_fixes.iter())
        .find(|f| f.h_accuracy_m <= 50.0)
        .map(|f| f.lat)
}

/// Runs the full pipeline (or the baseline) over parsed bursts.
pub fn run(
    bursts: Vec<SensorBurst>,
    cfg: &RunConfig,
    gateway: &Gateway,
    map_provider: Box<dyn MapProvider>,
    cache: ContextCache,
    mode: RunMode,
) -> Result<RunOutput, RunError> {
    let (bursts, segmentation_warnings) = segment_duty_cycle(bursts, &cfg.duty);
    let mut warnings = segmentation_warnings;

    // Sampling stride: keep every k-th window.
    let bursts: Vec<SensorBurst> = bursts
        .into_iter()
        .enumerate()
        .filter(|(i, _)| i % cfg.sampling_stride == 0)
        .map(|(_, b)| b)
        .collect();

    let mut windows: Vec<WindowFeatures> = Vec::with_capacity(bursts.len());
    let mut windows_skipped = 0usize;
    for burst in &bursts {
        match extract_features(burst, &cfg.duty) {
            Ok(f) => windows.push(f),
            Err(e) => {
                windows_skipped += 1;
                warnings.push(format!("window at t={} skipped: {e}", burst.start_time));
            }
        }
    }
    if windows.is_empty() {
        return Err(RunError::EmptyTrace);
    }

    let projection = Projection::new(reference_latitude(&bursts).unwrap_or(0.0));
    let resolver = LocationResolver::new(projection, map_provider, cache);

    match mode {
        RunMode::Pipeline => {
            run_pipeline(windows, windows_skipped, warnings, cfg, gateway, &resolver)
        }
        RunMode::Baseline => {
            run_baseline(windows, windows_skipped, warnings, cfg, gateway, &resolver)
        }
    }
}

fn ledger_snapshot(
    gateway: &Gateway,
    windows: &[WindowFeatures],
    duty_period: f64,
) -> Result<LedgerReport, RunError> {
    let ledger = gateway.ledger();
    // Observed calls per hour over the covered span.
    let span_s = (windows.last().map(|w| w.time).unwrap_or(0.0)
        - windows.first().map(|w| w.time).unwrap_or(0.0)
        + duty_period)
        .round()
        .max(1.0) as u128;
    let mut frequencies: BTreeMap<String, Money> = BTreeMap::new();
    for (template, usage) in ledger.rows() {
        frequencies.insert(
            template.to_string(),
            Ratio::new(usage.calls as u128 * 3600, span_s),
        );
    }
    Ok(ledger_report(&ledger, &frequencies)?)
}

fn run_pipeline(
    windows: Vec<WindowFeatures>,
    windows_skipped: usize,
    warnings: Vec<String>,
    cfg: &RunConfig,
    gateway: &Gateway,
    resolver: &LocationResolver,
) -> Result<RunOutput, RunError> {
    let thresholds = cfg.motion_thresholds;
    let tz = cfg.utc_offset_minutes;
    let ssid_failures = AtomicUsize::new(0);

    // Layer 1: per-window motion and location context detection.
    let mut detections: Vec<WindowDetection> =
        parallel_map(windows.len(), cfg.max_in_flight, |i| {
            let features = windows[i].clone();
            let motion = detect_motion(&features, &thresholds);
            let mut location = LocationContext::new(features.time);
            let mut grid = None;
            if let Some((lat, lon)) = features.location.filter(|_| features.location_valid) {
                grid = resolver.grid_key(lat, lon);
                if let Some((text, from_cache)) = resolver.map_context(gateway, lat, lon) {
                    location.map_text = Some(text);
                    location.map_from_cache = from_cache;
                }
            }
            let mut ssid_exchange = None;
            if !features.ssids.is_empty() {
                match ssid_location_context(&features.ssids, gateway) {
                    Ok((text, exchange)) => {
                        location.ssid_text = text;
                        ssid_exchange = exchange;
                    }
                    Err(_) => {
                        ssid_failures.fetch_add(1, Ordering::SeqCst);
                    }
                }
            }
            WindowDetection {
                features,
                motion,
                location,
                ssid_exchange,
                grid,
            }
        });

    // Deterministic transcript order: each cell's vision exchange is
    // attached to the first window observing that cell, regardless of which
    // worker actually resolved it.
    let mut map_exchanges = resolver.take_map_exchanges();
    let mut first_owner: BTreeMap<GridKey, usize> = BTreeMap::new();
    for (idx, det) in detections.iter().enumerate() {
        if let Some(key) = det.grid {
            first_owner.entry(key).or_insert(idx);
        }
    }
    let mut transcript: Vec<LlmExchange> = Vec::new();
    for (idx, det) in detections.iter().enumerate() {
        if let Some(key) = det.grid {
            if first_owner.get(&key) == Some(&idx) {
                if let Some(exchange) = map_exchanges.remove(&key) {
                    transcript.push(exchange);
                }
            }
        }
        if let Some(exchange) = &det.ssid_exchange {
            transcript.push(exchange.clone());
        }
    }

    let mut fallbacks = FallbackCounts {
        ssid_windows: ssid_failures.load(Ordering::SeqCst),
        ..FallbackCounts::default()
    };

    // Layer 2: batched refinement, then calibration over the batch span.
    let entries: Vec<BatchEntry> = detections
        .iter()
        .map(|d| BatchEntry {
            time: d.features.time,
            time_label: format_hhmm(d.features.time, tz),
            map_text: d.location.map_text.clone(),
            ssid_text: d.location.ssid_text.clone(),
        })
        .collect();
    let batches = batch_entries(entries, cfg.batch_size);

    let mut motion_texts: Vec<String> = Vec::with_capacity(detections.len());
    let mut offset = 0usize;
    for batch in &batches {
        let len = batch.entries.len();
        let refinement = refine_locations(batch, gateway);
        if refinement.fell_back {
            fallbacks.refinement_batches += 1;
        }
        transcript.extend(refinement.exchanges);
        for (i, (fused, source)) in refinement
            .fused
            .into_iter()
            .zip(refinement.sources)
            .enumerate()
        {
            let det = &mut detections[offset + i];
            det.location.fused_text = fused;
            det.location.fused_source = Some(source);
        }

        let motions: Vec<MotionContext> = detections[offset..offset + len]
            .iter()
            .map(|d| d.motion.clone())
            .collect();
        let fused: Vec<Option<String>> = detections[offset..offset + len]
            .iter()
            .map(|d| d.location.fused_text.clone())
            .collect();
        let labels: Vec<String> = batch.entries.iter().map(|e| e.time_label.clone()).collect();
        let calibration = calibrate_motions(&motions, &fused, &labels, gateway);
        fallbacks.calibration_windows += calibration.fallbacks;
        transcript.extend(calibration.exchanges);
        motion_texts.extend(calibration.texts);
        offset += len;
    }

    // Layer 3: context log and per-horizon journaling.
    let context_log: Vec<ContextLogEntry> = detections
        .iter()
        .zip(&motion_texts)
        .map(|(det, motion_text)| ContextLogEntry {
            time_label: format_hhmm(det.features.time, tz),
            motion_text: motion_text.clone(),
            location_text: det.location.render().to_string(),
        })
        .collect();

    let t0 = detections[0].features.time;
    let horizon = cfg.horizon_seconds;
    let mut horizon_windows: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (idx, det) in detections.iter().enumerate() {
        let slot = ((det.features.time - t0) / horizon).floor().max(0.0) as usize;
        horizon_windows.entry(slot).or_default().push(idx);
    }

    let mut journals = Vec::new();
    let mut horizon_reports = Vec::new();
    for (slot, indices) in &horizon_windows {
        let start = t0 + *slot as f64 * horizon;
        let end = start + horizon;
        let label = format!("{} to {}", format_hhmm(start, tz), format_hhmm(end, tz));
        let entries: Vec<ContextLogEntry> =
            indices.iter().map(|&i| context_log[i].clone()).collect();
        match journal_for_horizon(&entries, (start, end), &label, gateway) {
            Ok((journal, exchanges)) => {
                if journal.cleaning_fallback {
                    fallbacks.cleaning_horizons += 1;
                }
                horizon_reports.push(HorizonReport {
                    index: *slot,
                    start,
                    end,
                    label,
                    windows: indices.len(),
                    hallucinated: journal.hallucinated,
                    cleaning_fallback: journal.cleaning_fallback,
                    error: None,
                    exchange_ids: journal.exchange_ids.clone(),
                });
                transcript.extend(exchanges);
                journals.push(journal);
            }
            Err(e) => horizon_reports.push(HorizonReport {
                index: *slot,
                start,
                end,
                label,
                windows: indices.len(),
                hallucinated: false,
                cleaning_fallback: false,
                error: Some(e.to_string()),
                exchange_ids: Vec::new(),
            }),
        }
    }

    let attempted = horizon_reports.len().max(1);
    let hallucinated = horizon_reports.iter().filter(|h| h.hallucinated).count();

    let report = RunReport {
        mode: RunMode::Pipeline,
        config: ConfigEcho::from_config(cfg),
        windows: detections.len(),
        windows_skipped,
        segmentation_warnings: warnings,
        horizons: horizon_reports,
        hallucination_rate: hallucinated as f64 / attempted as f64,
        fallbacks,
        grid: resolver.stats(),
        ledger: ledger_snapshot(gateway, &windows_of(&detections), cfg.duty.period_big_t)?,
    };

    Ok(RunOutput {
        mode: RunMode::Pipeline,
        journals,
        transcript,
        context_log,
        report,
    })
}

fn windows_of(detections: &[WindowDetection]) -> Vec<WindowFeatures> {
    detections.iter().map(|d| d.features.clone()).collect()
}

fn run_baseline(
    windows: Vec<WindowFeatures>,
    windows_skipped: usize,
    warnings: Vec<String>,
    cfg: &RunConfig,
    gateway: &Gateway,
    resolver: &LocationResolver,
) -> Result<RunOutput, RunError> {
    let (journal, exchange) = baseline_journal(&windows, cfg.utc_offset_minutes, gateway)?;
    let report = RunReport {
        mode: RunMode::Baseline,
        config: ConfigEcho::from_config(cfg),
        windows: windows.len(),
        windows_skipped,
        segmentation_warnings: warnings,
        horizons: vec![HorizonReport {
            index: 0,
            start: journal.period.0,
            end: journal.period.1,
            label: format!(
                "{} to {}",
                format_hhmm(journal.period.0, cfg.utc_offset_minutes),
                format_hhmm(journal.period.1, cfg.utc_offset_minutes)
            ),
            windows: windows.len(),
            hallucinated: journal.hallucinated,
            cleaning_fallback: false,
            error: None,
            exchange_ids: journal.exchange_ids.clone(),
        }],
        hallucination_rate: if journal.hallucinated { 1.0 } else { 0.0 },
        fallbacks: FallbackCounts::default(),
        grid: resolver.stats(),
        ledger: ledger_snapshot(gateway, &windows, cfg.duty.period_big_t)?,
    };
    Ok(RunOutput {
        mode: RunMode::Baseline,
        journals: vec![journal],
        transcript: vec![exchange],
        context_log: Vec::new(),
        report,
    })
}

impl RunOutput {
    /// Writes every transcript response as a replay fixture (one file per
    /// request digest), so a recorded run can back later replay runs.
    pub fn record_llm_fixtures(&self, dir: &Path) -> Result<(), RunError> {
        std::fs::create_dir_all(dir)?;
        for exchange in &self.transcript {
            std::fs::write(dir.join(format!("{}.txt", exchange.id)), &exchange.response)?;
        }
        Ok(())
    }

    /// Concatenated non-hallucinated journal text (the evaluation unit).
    pub fn combined_journal_text(&self) -> String {
        self.journals
            .iter()
            .filter(|j| !j.hallucinated)
            .map(|j| j.final_text.as_str())
            .collect::<Vec<_>>()
            .join("\n\n")
    }

    /// Writes journals, context log, transcript, report, and ledger table.
    pub fn write(&self, dir: &Path) -> Result<(), RunError> {
        std::fs::create_dir_all(dir)?;
        for (idx, journal) in self.journals.iter().enumerate() {
            let mut text = String::new();
            text.push_str(&format!(
                "period: {}..{}\n",
                journal.period.0, journal.period.1
            ));
            text.push_str(&format!(
                "source: {}\n",
                match journal.source {
                    crate::journal::JournalSource::Pipeline => "pipeline",
                    crate::journal::JournalSource::Baseline => "baseline",
                }
            ));
            text.push_str(&format!("hallucinated: {}\n", journal.hallucinated));
            text.push_str(&format!(
                "cleaning_fallback: {}\n",
                journal.cleaning_fallback
            ));
            text.push_str(&format!(
                "exchanges: {}\n\n",
                journal.exchange_ids.join(",")
            ));
            text.push_str(&journal.final_text);
            text.push('\n');
            std::fs::write(dir.join(format!("journal_{idx:02}.txt")), text)?;
        }
        if self.mode == RunMode::Pipeline {
            let log: String = self
                .context_log
                .iter()
                .map(|e| e.render())
                .collect::<Vec<_>>()
                .join("\n");
            std::fs::write(dir.join("context.log"), log + "\n")?;
        }
        let mut transcript = String::new();
        for exchange in &self.transcript {
            transcript.push_str(&serde_json::to_string(exchange).expect("exchange serializes"));
            transcript.push('\n');
        }
        std::fs::write(dir.join("transcript.jsonl"), transcript)?;
        let report = serde_json::to_string_pretty(&self.report).expect("report serializes");
        std::fs::write(dir.join("report.json"), report)?;
        std::fs::write(dir.join("ledger.txt"), self.report.ledger.render_table())?;
        Ok(())
    }
}
