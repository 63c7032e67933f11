//! Trace data model, parsing, duty-cycle segmentation, and per-window
//! feature extraction.
//!
//! A trace is a newline-delimited sequence of sensor bursts, one per
//! duty-cycle activation. Each burst carries whatever the recorder captured
//! during its collection window: raw accelerometer samples, a device step
//! count, barometer samples, GPS fixes, and scanned WiFi SSIDs. This module
//! turns bursts into the four features the motion rules consume: step rate,
//! mean linear acceleration, altitude change, and horizontal speed.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Reference sea-level pressure in hPa. Only altitude *differences* are used
/// downstream, so the reference cancels.
pub const SEA_LEVEL_HPA: f64 = 1013.25;

/// One GPS fix as reported by the positioning module.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GpsFix {
    /// Epoch seconds.
    pub t: f64,
    pub lat: f64,
    pub lon: f64,
    pub speed_mps: f64,
    /// Horizontal accuracy radius in meters.
    pub h_accuracy_m: f64,
    /// Number of satellites used for the fix.
    pub satellites: u32,
}

impl GpsFix {
    fn validate(&self) -> Result<(), String> {
        if !(-90.0..=90.0).contains(&self.lat) || !self.lat.is_finite() {
            return Err(format!("latitude {} out of range", self.lat));
        }
        if !(self.lon > -180.0 && self.lon <= 180.0) || !self.lon.is_finite() {
            return Err(format!("longitude {} out of range", self.lon));
        }
        if self.h_accuracy_m < 0.0 || !self.h_accuracy_m.is_finite() {
            return Err(format!("accuracy {} negative", self.h_accuracy_m));
        }
        Ok(())
    }
}

/// One duty-cycle activation's raw sensor payload.
///
/// Accelerometer and barometer sample times are seconds relative to
/// `start_time`; GPS fix times are absolute epoch seconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensorBurst {
    /// Epoch seconds at which collection started.
    pub start_time: f64,
    /// (t, x, y, z) accelerometer samples in m/s², t relative to start.
    #[serde(default)]
    pub accel_samples: Option<Vec<(f64, f64, f64, f64)>>,
    /// Step count for the burst as reported by the recording device.
    #[serde(default)]
    pub step_count: Option<u32>,
    /// (t, p) barometer samples, p in hPa, t relative to start.
    #[serde(default)]
    pub pressure_hpa: Option<Vec<(f64, f64)>>,
    #[serde(default)]
    pub gps_fixes: Vec<GpsFix>,
    #[serde(default)]
    pub wifi_ssids: Vec<String>,
}

impl SensorBurst {
    pub fn new(start_time: f64) -> Self {
        SensorBurst {
            start_time,
            accel_samples: None,
            step_count: None,
            pressure_hpa: None,
            gps_fixes: Vec::new(),
            wifi_ssids: Vec::new(),
        }
    }

    /// Span of the burst in seconds: the latest sample time across streams.
    pub fn span_seconds(&self) -> f64 {
        let mut span: f64 = 0.0;
        if let Some(acc) = &self.accel_samples {
            if let Some(last) = acc.last() {
                span = span.max(last.0);
            }
        }
        if let Some(p) = &self.pressure_hpa {
            if let Some(last) = p.last() {
                span = span.max(last.0);
            }
        }
        for fix in &self.gps_fixes {
            span = span.max(fix.t - self.start_time);
        }
        span
    }

    fn validate(&self) -> Result<(), String> {
        if !self.start_time.is_finite() {
            return Err("start_time not finite".into());
        }
        if let Some(acc) = &self.accel_samples {
            let mut prev = f64::NEG_INFINITY;
            for &(t, ..) in acc {
                if t <= prev {
                    return Err(format!("accel timestamps not strictly increasing at t={t}"));
                }
                prev = t;
            }
        }
        if let Some(samples) = &self.pressure_hpa {
            for &(t, p) in samples {
                if p <= 0.0 || !p.is_finite() {
                    return Err(format!("pressure {p} at t={t} not positive"));
                }
            }
        }
        for fix in &self.gps_fixes {
            fix.validate()?;
        }
        Ok(())
    }
}

/// Duty-cycle parameters: collect for `collect_duration_t` seconds every
/// `period_big_t` seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DutyCycleConfig {
    pub collect_duration_t: f64,
    pub period_big_t: f64,
}

impl Default for DutyCycleConfig {
    fn default() -> Self {
        DutyCycleConfig {
            collect_duration_t: 15.0,
            period_big_t: 60.0,
        }
    }
}

impl DutyCycleConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.collect_duration_t > 0.0 && self.collect_duration_t <= self.period_big_t) {
            return Err(format!(
                "duty cycle requires 0 < t <= T, got t={} T={}",
                self.collect_duration_t, self.period_big_t
            ));
        }
        Ok(())
    }
}

/// The four motion-rule inputs plus location/SSID context material for one
/// window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowFeatures {
    /// Epoch seconds (burst start).
    pub time: f64,
    /// Steps per minute.
    pub s: f64,
    /// Mean linear-acceleration magnitude, m/s².
    pub a: f64,
    /// Altitude change over the burst, meters, signed.
    pub delta_h: f64,
    /// Median valid GPS horizontal speed, m/s. Zero when `speed_valid` is false.
    pub v: f64,
    pub location: Option<(f64, f64)>,
    pub ssids: Vec<String>,
    pub speed_valid: bool,
    pub location_valid: bool,
    pub altitude_valid: bool,
}

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("line {line}: malformed record: {detail}")]
    MalformedRecord { line: usize, detail: String },
    #[error("line {line}: burst at t={time} earlier than predecessor at t={prev}")]
    NonMonotonicTime { line: usize, time: f64, prev: f64 },
    #[error("trace io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Error, PartialEq)]
pub enum FeatureError {
    #[error("insufficient samples: {0}")]
    InsufficientSamples(String),
    #[error("pressure {0} hPa outside (300, 1100)")]
    PressureOutOfRange(f64),
    #[error("burst has no pressure samples")]
    MissingBarometer,
    #[error("burst has neither accelerometer samples nor a step count")]
    MissingMotionSource,
}

/// Parses a newline-delimited trace. Blank lines and `#` comments are
/// skipped; any other malformed line aborts with its line number.
pub fn parse_trace<R: std::io::BufRead>(reader: R) -> Result<Vec<SensorBurst>, TraceError> {
    let mut bursts: Vec<SensorBurst> = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let burst: SensorBurst =
            serde_json::from_str(trimmed).map_err(|e| TraceError::MalformedRecord {
                line: line_no,
                detail: e.to_string(),
            })?;
        burst
            .validate()
            .map_err(|detail| TraceError::MalformedRecord {
                line: line_no,
                detail,
            })?;
        if let Some(prev) = bursts.last() {
            if burst.start_time < prev.start_time {
                return Err(TraceError::NonMonotonicTime {
                    line: line_no,
                    time: burst.start_time,
                    prev: prev.start_time,
                });
            }
        }
        bursts.push(burst);
    }
    Ok(bursts)
}

/// Enforces the duty cycle over a time-ordered burst sequence.
///
/// Bursts spanning more than `t + 2` seconds are truncated to their leading
/// `t` seconds of samples. Bursts spaced closer than `0.5·T` emit an advisory
/// warning but are retained.
pub fn segment_duty_cycle(
    bursts: Vec<SensorBurst>,
    cfg: &DutyCycleConfig,
) -> (Vec<SensorBurst>, Vec<String>) {
    let mut warnings = Vec::new();
    let mut out = Vec::with_capacity(bursts.len());
    let mut prev_start: Option<f64> = None;
    for mut burst in bursts {
        if let Some(prev) = prev_start {
            let gap = burst.start_time - prev;
            if gap < 0.5 * cfg.period_big_t {
                warnings.push(format!(
                    "bursts at t={prev} and t={} are {gap:.1}s apart, below half the {}s period",
                    burst.start_time, cfg.period_big_t
                ));
            }
        }
        prev_start = Some(burst.start_time);
        if burst.span_seconds() > cfg.collect_duration_t + 2.0 {
            let t_max = cfg.collect_duration_t;
            if let Some(acc) = &mut burst.accel_samples {
                acc.retain(|&(t, ..)| t <= t_max);
            }
            if let Some(p) = &mut burst.pressure_hpa {
                p.retain(|&(t, _)| t <= t_max);
            }
            let start = burst.start_time;
            burst.gps_fixes.retain(|f| f.t - start <= t_max);
        }
        out.push(burst);
    }
    (out, warnings)
}

/// First-order low-pass tracker used for gravity estimation.
struct LowPass {
    tau: f64,
    state: [f64; 3],
}

impl LowPass {
    fn new(tau: f64, initial: [f64; 3]) -> Self {
        LowPass {
            tau,
            state: initial,
        }
    }

    fn update(&mut self, dt: f64, sample: [f64; 3]) -> [f64; 3] {
        let alpha = if dt <= 0.0 { 0.0 } else { dt / (self.tau + dt) };
        for (state, input) in self.state.iter_mut().zip(sample) {
            *state += alpha * (input - *state);
        }
        self.state
    }
}

/// Gravity-tracking time constant in seconds.
const GRAVITY_TAU_S: f64 = 0.5;

/// Mean magnitude of acceleration with the low-passed gravity vector removed.
///
/// Gravity is tracked by a first-order low-pass (0.5 s time constant) on the
/// raw vector, seeded with the first sample so a resting burst reads ~0.
pub fn linear_accel_mean(samples: &[(f64, f64, f64, f64)]) -> Result<f64, FeatureError> {
    if samples.len() < 2 {
        return Err(FeatureError::InsufficientSamples(format!(
            "need >= 2 accel samples, got {}",
            samples.len()
        )));
    }
    let first = samples[0];
    let mut gravity = LowPass::new(GRAVITY_TAU_S, [first.1, first.2, first.3]);
    let mut prev_t = first.0;
    let mut sum = 0.0;
    for &(t, x, y, z) in samples {
        let g = gravity.update(t - prev_t, [x, y, z]);
        prev_t = t;
        let (lx, ly, lz) = (x - g[0], y - g[1], z - g[2]);
        sum += (lx * lx + ly * ly + lz * lz).sqrt();
    }
    Ok(sum / samples.len() as f64)
}

/// Band-pass step counter parameters. The band brackets human cadence; the
/// threshold and refractory interval reject jitter and double counts.
const STEP_BAND_LOW_HZ: f64 = 0.5;
const STEP_BAND_HIGH_HZ: f64 = 3.0;
const STEP_THRESHOLD_MPS2: f64 = 1.0;
const STEP_REFRACTORY_S: f64 = 0.3;

/// Counts steps in an accelerometer burst.
///
/// The acceleration magnitude is band-passed to 0.5–3 Hz (cascaded
/// first-order high- and low-pass), and upward crossings of 1.0 m/s² with a
/// 0.3 s refractory interval are counted as steps. Deterministic for a given
/// sample list; a stand-in for the platform step counter when a trace lacks
/// device counts.
pub fn count_steps(samples: &[(f64, f64, f64, f64)]) -> Result<u32, FeatureError> {
    if samples.len() < 2 || samples.last().unwrap().0 - samples[0].0 < 1.0 {
        return Err(FeatureError::InsufficientSamples(
            "need >= 2 accel samples spanning >= 1 s".into(),
        ));
    }
    let tau_hp = 1.0 / (2.0 * std::f64::consts::PI * STEP_BAND_LOW_HZ);
    let tau_lp = 1.0 / (2.0 * std::f64::consts::PI * STEP_BAND_HIGH_HZ);

    let mag = |&(_, x, y, z): &(f64, f64, f64, f64)| (x * x + y * y + z * z).sqrt();
    let first_mag = mag(&samples[0]);

    // Cascaded single-pole filters over the magnitude signal. The high-pass
    // state is the slow baseline; its residual feeds the low-pass.
    let mut baseline = first_mag;
    let mut smoothed = 0.0;
    let mut prev_t = samples[0].0;
    let mut steps = 0u32;
    let mut above = false;
    let mut last_step_t = f64::NEG_INFINITY;
    for sample in samples {
        let t = sample.0;
        let dt = (t - prev_t).max(0.0);
        prev_t = t;
        let m = mag(sample);
        let a_hp = if dt <= 0.0 { 0.0 } else { dt / (tau_hp + dt) };
        baseline += a_hp * (m - baseline);
        let high_passed = m - baseline;
        let a_lp = if dt <= 0.0 { 0.0 } else { dt / (tau_lp + dt) };
        smoothed += a_lp * (high_passed - smoothed);

        let is_above = smoothed > STEP_THRESHOLD_MPS2;
        if is_above && !above && t - last_step_t >= STEP_REFRACTORY_S {
            steps += 1;
            last_step_t = t;
        }
        above = is_above;
    }
    Ok(steps)
}

/// International barometric formula with a fixed sea-level reference.
pub fn altitude_from_pressure(p_hpa: f64) -> Result<f64, FeatureError> {
    if !(p_hpa > 300.0 && p_hpa < 1100.0) {
        return Err(FeatureError::PressureOutOfRange(p_hpa));
    }
    Ok(44330.0 * (1.0 - (p_hpa / SEA_LEVEL_HPA).powf(0.1903)))
}

/// Signed altitude change over the burst: altitude at the last pressure
/// sample minus altitude at the first.
pub fn altitude_change(burst: &SensorBurst) -> Result<f64, FeatureError> {
    let samples = burst
        .pressure_hpa
        .as_ref()
        .filter(|s| s.len() >= 2)
        .ok_or(FeatureError::MissingBarometer)?;
    let first = altitude_from_pressure(samples[0].1)?;
    let last = altitude_from_pressure(samples[samples.len() - 1].1)?;
    Ok(last - first)
}

/// Applies the GPS quality filters.
///
/// Speed is the median of fixes with at least 5 satellites; location is the
/// last fix whose horizontal accuracy radius is within 50 m. Either may be
/// absent.
pub fn filter_gps(fixes: &[GpsFix]) -> (Option<f64>, Option<(f64, f64)>) {
    const MIN_SATELLITES: u32 = 5;
    const MAX_ACCURACY_M: f64 = 50.0;

    let mut speeds: Vec<f64> = fixes
        .iter()
        .filter(|f| f.satellites >= MIN_SATELLITES)
        .map(|f| f.speed_mps)
        .collect();
    let speed = if speeds.is_empty() {
        None
    } else {
        speeds.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let n = speeds.len();
        Some(if n % 2 == 1 {
            speeds[n / 2]
        } else {
            (speeds[n / 2 - 1] + speeds[n / 2]) / 2.0
        })
    };

    let location = fixes
        .iter()
        .rev()
        .find(|f| f.h_accuracy_m <= MAX_ACCURACY_M)
        .map(|f| (f.lat, f.lon));

    (speed, location)
}

/// Drops duplicate SSIDs, keeping the first occurrence in order. Empty
/// strings (hidden networks) are dropped entirely.
pub fn dedup_ssids(ssids: &[String]) -> Vec<String> {
    let mut seen = std::collections::HashSet::new();
    ssids
        .iter()
        .filter(|s| !s.is_empty())
        .filter(|s| seen.insert(s.as_str()))
        .cloned()
        .collect()
}

/// Computes the motion-rule inputs and context material for one burst.
///
/// Step rate prefers the device-provided count and falls back to the local
/// counter. A missing barometer degrades to `delta_h = 0` with
/// `altitude_valid = false`; an out-of-range pressure reading is treated the
/// same way (broken sensor). Missing speed degrades to `v = 0` with
/// `speed_valid = false`, which the motion rules widen into an ambiguous
/// label set.
pub fn extract_features(
    burst: &SensorBurst,
    cfg: &DutyCycleConfig,
) -> Result<WindowFeatures, FeatureError> {
    let steps = match (burst.step_count, &burst.accel_samples) {
        (Some(n), _) => n,
        (None, Some(samples)) => count_steps(samples)?,
        (None, None) => return Err(FeatureError::MissingMotionSource),
    };
    let s = steps as f64 * 60.0 / cfg.collect_duration_t;

    let a = match &burst.accel_samples {
        Some(samples) if samples.len() >= 2 => linear_accel_mean(samples)?,
        _ => 0.0,
    };

    let (delta_h, altitude_valid) = match altitude_change(burst) {
        Ok(dh) => (dh, true),
        Err(FeatureError::MissingBarometer) | Err(FeatureError::PressureOutOfRange(_)) => {
            (0.0, false)
        }
        Err(e) => return Err(e),
    };

    let (speed, location) = filter_gps(&burst.gps_fixes);

    Ok(WindowFeatures {
        time: burst.start_time,
        s,
        a,
        delta_h,
        v: speed.unwrap_or(0.0),
        location,
        ssids: dedup_ssids(&burst.wifi_ssids),
        speed_valid: speed.is_some(),
        location_valid: location.is_some(),
        altitude_valid,
    })
}

/// Renders epoch seconds as "HH:MM" in the configured timezone.
pub fn format_hhmm(epoch_s: f64, utc_offset_minutes: i32) -> String {
    let shifted = epoch_s as i64 + utc_offset_minutes as i64 * 60;
    let day_s = shifted.rem_euclid(86_400);
    format!("{:02}:{:02}", day_s / 3600, (day_s % 3600) / 60)
}
