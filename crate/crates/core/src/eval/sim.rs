//! Scenario-scripted synthetic trace generation.
//!
//! A scenario is a sequence of segments, each with a ground-truth motion
//! label and feature ranges sitting strictly inside the detection thresholds
//! with at least a 20% margin. The generator draws per-window features
//! uniformly within the ranges and materializes raw sensor payloads whose
//! extracted features land exactly on the draws: step counts are quantized
//! to whole steps, GPS fixes repeat the drawn speed so the median is exact,
//! and barometer samples invert the altitude formula so the altitude change
//! reproduces the drawn value. This makes the generator an oracle for the
//! rule chain: valid-GPS windows must classify to exactly the scripted
//! label, and GPS-denied windows must keep it among their candidates.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::motion::MotionLabel;
use crate::trace::{GpsFix, SensorBurst, SEA_LEVEL_HPA};

/// Default epoch for generated traces: a morning hour, UTC.
pub const DEFAULT_START_EPOCH: f64 = 1_714_525_200.0;

const ACCEL_RATE_HZ: f64 = 10.0;
const WOBBLE_HZ: f64 = 2.0;
const COLLECT_SECONDS: f64 = 15.0;
const PERIOD_SECONDS: f64 = 60.0;

#[derive(Debug, Error, PartialEq)]
pub enum SimError {
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
}

/// Uniform draw ranges for the four features.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureRanges {
    pub steps_per_min: (f64, f64),
    pub accel: (f64, f64),
    pub delta_h: (f64, f64),
    pub speed: (f64, f64),
}

impl FeatureRanges {
    /// Canonical margined ranges per label. Endpoints stay at least 20%
    /// inside the label's own thresholds and clear of competing branches,
    /// except cycling's upper speed, which can only approach the any-speed
    /// vehicle threshold from below.
    pub fn for_label(label: MotionLabel) -> FeatureRanges {
        match label {
            MotionLabel::Stationary => FeatureRanges {
                steps_per_min: (0.0, 1.6),
                accel: (0.0, 0.05),
                delta_h: (-0.05, 0.05),
                speed: (0.0, 0.08),
            },
            MotionLabel::LimitedMotion => FeatureRanges {
                steps_per_min: (4.0, 8.0),
                accel: (0.2, 0.6),
                delta_h: (-0.5, 0.5),
                speed: (0.12, 0.4),
            },
            MotionLabel::Walking => FeatureRanges {
                steps_per_min: (60.0, 112.0),
                accel: (0.3, 1.2),
                delta_h: (-0.4, 0.4),
                speed: (0.8, 1.44),
            },
            MotionLabel::JoggingRunning => FeatureRanges {
                steps_per_min: (168.0, 220.0),
                accel: (1.5, 3.0),
                delta_h: (-0.4, 0.4),
                speed: (2.4, 3.2),
            },
            MotionLabel::Cycling => FeatureRanges {
                steps_per_min: (60.0, 112.0),
                accel: (0.5, 1.5),
                delta_h: (-0.4, 0.4),
                speed: (4.8, 4.99),
            },
            MotionLabel::VehicleSubwayFerryTrain => FeatureRanges {
                steps_per_min: (0.0, 4.0),
                accel: (0.2, 0.5),
                delta_h: (-0.4, 0.4),
                speed: (6.0, 25.0),
            },
            MotionLabel::EscalatorElevator => FeatureRanges {
                steps_per_min: (0.0, 8.0),
                accel: (0.2, 0.5),
                delta_h: (3.0, 6.0),
                speed: (0.0, 1.6),
            },
        }
    }
}

/// One scripted stretch of consistent behavior.
#[derive(Debug, Clone)]
pub struct Segment {
    pub minutes: u32,
    pub truth: MotionLabel,
    /// False scripts a GPS-denied stretch (indoor, underground): fixes are
    /// emitted but fail both quality filters, making the window ambiguous by
    /// construction.
    pub gps_valid: bool,
    pub ranges: FeatureRanges,
    /// Waypoint path (lat, lon) interpolated across the segment.
    pub path: ((f64, f64), (f64, f64)),
    pub ssids: Vec<String>,
}

impl Segment {
    pub fn new(
        minutes: u32,
        truth: MotionLabel,
        gps_valid: bool,
        path: ((f64, f64), (f64, f64)),
    ) -> Self {
        Segment {
            minutes,
            truth,
            gps_valid,
            ranges: FeatureRanges::for_label(truth),
            path,
            ssids: Vec::new(),
        }
    }

    pub fn with_ssids(mut self, ssids: &[&str]) -> Self {
        self.ssids = ssids.iter().map(|s| s.to_string()).collect();
        self
    }

    pub fn with_delta_h(mut self, lo: f64, hi: f64) -> Self {
        self.ranges.delta_h = (lo, hi);
        self
    }
}

/// A named script with a human-style reference description for evaluation.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub name: String,
    pub reference_text: String,
    pub segments: Vec<Segment>,
}

/// Ground truth for one generated window.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WindowTruth {
    pub index: usize,
    pub time: f64,
    pub label: MotionLabel,
    pub gps_valid: bool,
}

/// A generated trace with its per-window ground truth.
#[derive(Debug, Clone)]
pub struct SyntheticTrace {
    pub bursts: Vec<SensorBurst>,
    pub truths: Vec<WindowTruth>,
}

impl SyntheticTrace {
    /// Newline-delimited record serialization (the trace file format).
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for burst in &self.bursts {
            out.push_str(&serde_json::to_string(burst).expect("burst serializes"));
            out.push('\n');
        }
        out
    }

    /// Tab-separated ground-truth labels: index, epoch time, label, gps flag.
    pub fn labels_tsv(&self) -> String {
        let mut out = String::from("index\ttime\tlabel\tgps_valid\n");
        for truth in &self.truths {
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\n",
                truth.index,
                truth.time,
                truth.label.as_str(),
                truth.gps_valid
            ));
        }
        out
    }
}

fn check(condition: bool, msg: String) -> Result<(), SimError> {
    if condition {
        Ok(())
    } else {
        Err(SimError::InvalidScenario(msg))
    }
}

fn validate_segment(idx: usize, seg: &Segment) -> Result<(), SimError> {
    let r = &seg.ranges;
    let name = format!("segment {idx} ({})", seg.truth);
    check(seg.minutes > 0, format!("{name}: zero duration"))?;
    for (label, (lo, hi)) in [
        ("steps", r.steps_per_min),
        ("accel", r.accel),
        ("delta_h", r.delta_h),
        ("speed", r.speed),
    ] {
        check(
            lo.is_finite() && hi.is_finite() && lo <= hi,
            format!("{name}: bad {label} range {lo}..{hi}"),
        )?;
    }
    check(
        r.steps_per_min.0 >= 0.0 && r.speed.0 >= 0.0 && r.accel.0 >= 0.0,
        format!("{name}: negative feature range"),
    )?;
    check(
        r.delta_h.1.abs() <= 50.0,
        format!("{name}: implausible delta_h"),
    )?;

    // Margined containment: the drawn features must trip the label's own
    // branch with >= 20% slack and stay clear of competing branches so
    // valid-GPS windows classify to exactly the scripted label.
    let gps = seg.gps_valid;
    match seg.truth {
        MotionLabel::Stationary => {
            check(
                r.steps_per_min.1 <= 1.6,
                format!("{name}: steps must be <= 1.6"),
            )?;
            check(r.accel.1 <= 0.08, format!("{name}: accel must be <= 0.08"))?;
            check(
                r.delta_h.0 >= -0.08 && r.delta_h.1 <= 0.08,
                format!("{name}: |delta_h| must be <= 0.08"),
            )?;
            check(
                !gps || r.speed.1 <= 0.08,
                format!("{name}: speed must be <= 0.08"),
            )?;
        }
        MotionLabel::LimitedMotion => {
            check(
                r.steps_per_min.0 >= 2.4 && r.steps_per_min.1 <= 8.0,
                format!("{name}: steps must be in [2.4, 8]"),
            )?;
            check(
                r.delta_h.0 >= -0.8 && r.delta_h.1 <= 0.8,
                format!("{name}: |delta_h| must be <= 0.8"),
            )?;
            check(
                !gps || r.speed.1 <= 0.4,
                format!("{name}: speed must be <= 0.4"),
            )?;
        }
        MotionLabel::Walking => {
            check(
                r.steps_per_min.0 >= 60.0 && r.steps_per_min.1 <= 112.0,
                format!("{name}: steps must be in [60, 112]"),
            )?;
            check(
                !gps || r.speed.1 <= 1.44,
                format!("{name}: speed must be <= 1.44"),
            )?;
        }
        MotionLabel::JoggingRunning => {
            check(
                r.steps_per_min.0 >= 168.0,
                format!("{name}: steps must be >= 168"),
            )?;
            check(
                !gps || (r.speed.0 >= 2.4 && r.speed.1 <= 3.2),
                format!("{name}: speed must be in [2.4, 3.2]"),
            )?;
        }
        MotionLabel::Cycling => {
            check(
                r.steps_per_min.0 >= 60.0 && r.steps_per_min.1 <= 112.0,
                format!("{name}: steps must be in [60, 112]"),
            )?;
            check(
                !gps || (r.speed.0 >= 4.8 && r.speed.1 <= 4.99),
                format!("{name}: speed must be in [4.8, 4.99]"),
            )?;
        }
        MotionLabel::VehicleSubwayFerryTrain => {
            check(
                r.steps_per_min.1 <= 4.0,
                format!("{name}: steps must be <= 4"),
            )?;
            check(
                !gps || r.speed.0 >= 6.0,
                format!("{name}: speed must be >= 6"),
            )?;
        }
        MotionLabel::EscalatorElevator => {
            check(
                r.steps_per_min.1 <= 8.0,
                format!("{name}: steps must be <= 8"),
            )?;
            check(r.delta_h.0 >= 3.0, format!("{name}: delta_h must be >= 3"))?;
            check(
                !gps || r.speed.1 <= 1.6,
                format!("{name}: speed must be <= 1.6"),
            )?;
        }
    }
    Ok(())
}

pub fn validate_scenario(scenario: &Scenario) -> Result<(), SimError> {
    check(
        !scenario.segments.is_empty(),
        "scenario has no segments".to_string(),
    )?;
    for (idx, seg) in scenario.segments.iter().enumerate() {
        validate_segment(idx, seg)?;
    }
    Ok(())
}

/// Inverse of the altitude formula: pressure at altitude `h`.
fn pressure_for_altitude(h: f64) -> f64 {
    SEA_LEVEL_HPA * (1.0 - h / 44330.0).powf(1.0 / 0.1903)
}

fn lerp(a: f64, b: f64, t: f64) -> f64 {
    a + (b - a) * t
}

/// Generates the trace for a scenario. Deterministic for a given seed.
pub fn generate_synthetic_trace(
    scenario: &Scenario,
    seed: u64,
    start_epoch: f64,
) -> Result<SyntheticTrace, SimError> {
    validate_scenario(scenario)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut bursts = Vec::new();
    let mut truths = Vec::new();
    let mut altitude = 20.0;
    let mut window_index = 0usize;

    for seg in &scenario.segments {
        let windows = seg.minutes as usize;
        for w in 0..windows {
            let time = start_epoch + window_index as f64 * PERIOD_SECONDS;
            let r = &seg.ranges;

            let steps_target = rng.gen_range(r.steps_per_min.0..=r.steps_per_min.1);
            let steps = (steps_target * COLLECT_SECONDS / 60.0).round() as u32;
            let accel_target = rng.gen_range(r.accel.0..=r.accel.1);
            let delta_h = rng.gen_range(r.delta_h.0..=r.delta_h.1);
            let speed = rng.gen_range(r.speed.0..=r.speed.1);

            // Accelerometer: gravity plus a cadence-band wobble sized to the
            // drawn linear-acceleration target (mean |A sin| = 2A/pi).
            let n_samples = (COLLECT_SECONDS * ACCEL_RATE_HZ) as usize;
            let amplitude = if accel_target < 0.1 {
                0.0
            } else {
                accel_target * std::f64::consts::FRAC_PI_2
            };
            let accel: Vec<(f64, f64, f64, f64)> = (0..n_samples)
                .map(|i| {
                    let t = i as f64 / ACCEL_RATE_HZ;
                    let x = amplitude * (std::f64::consts::TAU * WOBBLE_HZ * t).sin();
                    (t, x, 0.0, 9.81)
                })
                .collect();

            let pressure = vec![
                (0.0, pressure_for_altitude(altitude)),
                (COLLECT_SECONDS, pressure_for_altitude(altitude + delta_h)),
            ];
            altitude += delta_h;

            let (sats, accuracy) = if seg.gps_valid { (9, 8.0) } else { (3, 120.0) };
            let ((lat0, lon0), (lat1, lon1)) = seg.path;
            let fixes: Vec<GpsFix> = [2.0, 6.0, 10.0, 14.0]
                .iter()
                .map(|&dt| {
                    let frac = (w as f64 * PERIOD_SECONDS + dt) / (windows as f64 * PERIOD_SECONDS);
                    GpsFix {
                        t: time + dt,
                        lat: lerp(lat0, lat1, frac),
                        lon: lerp(lon0, lon1, frac),
                        speed_mps: speed,
                        h_accuracy_m: accuracy,
                        satellites: sats,
                    }
                })
                .collect();

            bursts.push(SensorBurst {
                start_time: time,
                accel_samples: Some(accel),
                step_count: Some(steps),
                pressure_hpa: Some(pressure),
                gps_fixes: fixes,
                wifi_ssids: seg.ssids.clone(),
            });
            truths.push(WindowTruth {
                index: window_index,
                time,
                label: seg.truth,
                gps_valid: seg.gps_valid,
            });
            window_index += 1;
        }
    }
    Ok(SyntheticTrace { bursts, truths })
}

// Waypoints loosely around a coastal city grid.
const PROMENADE: (f64, f64) = (22.2830, 114.2120);
const CAFE: (f64, f64) = (22.2860, 114.2165);
const HILL_FOOT: (f64, f64) = (22.3560, 114.2680);
const HILL_TOP: (f64, f64) = (22.3620, 114.2745);
const CAMPUS: (f64, f64) = (22.3363, 114.2654);
const HARBOUR_WEST: (f64, f64) = (22.2920, 114.1690);
const HARBOUR_EAST: (f64, f64) = (22.2945, 114.2030);
const SUBURB: (f64, f64) = (22.3810, 114.1880);
const MARKET: (f64, f64) = (22.3170, 114.1700);
const PIER: (f64, f64) = (22.2870, 114.1590);

fn seg(minutes: u32, truth: MotionLabel, from: (f64, f64), to: (f64, f64)) -> Segment {
    Segment::new(minutes, truth, true, (from, to))
}

fn seg_indoor(minutes: u32, truth: MotionLabel, at: (f64, f64)) -> Segment {
    Segment::new(minutes, truth, false, (at, at))
}

/// The built-in scenario catalog.
pub fn builtin_scenarios() -> Vec<Scenario> {
    use MotionLabel::*;
    vec![
        Scenario {
            name: "seaside_morning".into(),
            reference_text: "In the morning the user walks along the seaside promenade, stops at \
                             the Pacific Coffee cafe for a long rest with a drink, and then walks \
                             back along the waterfront."
                .into(),
            segments: vec![
                seg(40, Walking, PROMENADE, CAFE).with_ssids(&["Harbourfront Free WiFi"]),
                seg(20, Stationary, CAFE, CAFE).with_ssids(&[
                    "Pacific Coffee",
                    "Pacific Coffee",
                    "CSL-Guest",
                ]),
                seg(30, Walking, CAFE, PROMENADE).with_ssids(&["Harbourfront Free WiFi"]),
            ],
        },
        Scenario {
            name: "office_day".into(),
            reference_text: "The user walks to the campus, spends the morning stationary at an \
                             office desk on the university network, moves around the office a \
                             little, and keeps working."
                .into(),
            segments: vec![
                seg(10, Walking, CAMPUS, CAMPUS).with_ssids(&["eduroam", "eduroam"]),
                seg_indoor(50, Stationary, CAMPUS).with_ssids(&["eduroam", "Campus-Staff"]),
                seg_indoor(20, LimitedMotion, CAMPUS).with_ssids(&["eduroam", "Campus-Staff"]),
                seg_indoor(40, Stationary, CAMPUS).with_ssids(&["eduroam", "Campus-Staff"]),
            ],
        },
        Scenario {
            name: "morning_jog".into(),
            reference_text: "The user goes jogging along the hill road, slows to a walk, and \
                             rests standing still before heading home."
                .into(),
            segments: vec![
                seg(30, JoggingRunning, HILL_FOOT, HILL_TOP),
                seg(10, Walking, HILL_TOP, HILL_FOOT),
                seg(10, Stationary, HILL_FOOT, HILL_FOOT),
            ],
        },
        Scenario {
            name: "harbour_cycle".into(),
            reference_text: "The user cycles along the harbour waterfront for most of an hour \
                             and then rests by the water."
                .into(),
            segments: vec![
                seg(45, Cycling, HARBOUR_WEST, HARBOUR_EAST),
                seg(15, Stationary, HARBOUR_EAST, HARBOUR_EAST),
            ],
        },
        Scenario {
            name: "cross_town_drive".into(),
            reference_text: "The user walks to a car, drives across town on the highway, and \
                             walks the last stretch to a suburban destination."
                .into(),
            segments: vec![
                seg(5, Walking, MARKET, MARKET),
                seg(35, VehicleSubwayFerryTrain, MARKET, SUBURB),
                seg(10, Walking, SUBURB, SUBURB),
            ],
        },
        Scenario {
            name: "subway_commute".into(),
            reference_text: "The user walks to the station, rides the subway underground where \
                             GPS is unavailable, and walks from the station to the campus."
                .into(),
            segments: vec![
                seg(8, Walking, MARKET, MARKET).with_ssids(&["MTR Free Wi-Fi"]),
                seg_indoor(25, VehicleSubwayFerryTrain, MARKET)
                    .with_ssids(&["MTR Free Wi-Fi", "MTR Free Wi-Fi"]),
                seg(7, Walking, CAMPUS, CAMPUS),
            ],
        },
        Scenario {
            name: "tower_ascent".into(),
            reference_text: "The user rides an elevator up a tower, works at a desk high in the \
                             building, and takes another elevator further up to a restaurant."
                .into(),
            segments: vec![
                seg(4, EscalatorElevator, CAMPUS, CAMPUS),
                seg_indoor(40, Stationary, CAMPUS).with_ssids(&["TowerNet-Office"]),
                seg(4, EscalatorElevator, CAMPUS, CAMPUS),
            ],
        },
        Scenario {
            name: "country_hike".into(),
            reference_text: "The user hikes uphill on a country trail for most of an hour, rests \
                             at a viewpoint, and walks back down to the trailhead."
                .into(),
            segments: vec![
                seg(50, Walking, HILL_FOOT, HILL_TOP).with_delta_h(0.25, 0.45),
                seg(10, Stationary, HILL_TOP, HILL_TOP),
                seg(40, Walking, HILL_TOP, HILL_FOOT).with_delta_h(-0.45, -0.25),
            ],
        },
        Scenario {
            name: "quiet_evening".into(),
            reference_text: "The user spends a quiet evening at home, stationary on the sofa on \
                             the home network."
                .into(),
            segments: vec![
                seg(60, Stationary, SUBURB, SUBURB).with_ssids(&["HomeNet-5G", "HomeNet-5G"])
            ],
        },
        Scenario {
            name: "market_errands".into(),
            reference_text: "The user walks to the market, browses slowly among the stalls, \
                             walks on to another block, and waits in a queue."
                .into(),
            segments: vec![
                seg(15, Walking, MARKET, MARKET).with_ssids(&["Market-Public"]),
                seg(20, LimitedMotion, MARKET, MARKET)
                    .with_ssids(&["Market-Public", "StallPay-AP"]),
                seg(10, Walking, MARKET, MARKET),
                seg(15, Stationary, MARKET, MARKET).with_ssids(&["Market-Public"]),
            ],
        },
        Scenario {
            name: "ferry_crossing".into(),
            reference_text: "The user walks to the pier, crosses the harbour by ferry over the \
                             water, and rests on the far side."
                .into(),
            segments: vec![
                seg(5, Walking, PIER, PIER).with_ssids(&["Ferry Pier WiFi"]),
                seg(20, VehicleSubwayFerryTrain, PIER, HARBOUR_EAST),
                seg(10, Stationary, HARBOUR_EAST, HARBOUR_EAST),
            ],
        },
        Scenario {
            name: "venue_crawl".into(),
            reference_text: "The user spends the morning wandering the old town from venue to \
                             venue: walking past Blue Lotus Bakery, pausing at Harbour Books, \
                             strolling through the Mosaic Museum, resting at Fountain Court, \
                             walking by Noodle Republic, sitting at Gallery 88, passing the \
                             Clocktower Cafe, lingering at Orchid Market, and ending the walk \
                             at Pier Seven."
                .into(),
            segments: vec![
                seg(10, Walking, MARKET, PIER).with_ssids(&["Blue Lotus Bakery"]),
                seg(10, Stationary, PIER, PIER).with_ssids(&["Harbour Books"]),
                seg(10, Walking, PIER, HARBOUR_WEST).with_ssids(&["Mosaic Museum WiFi"]),
                seg(10, Stationary, HARBOUR_WEST, HARBOUR_WEST).with_ssids(&["Fountain Court"]),
                seg(10, Walking, HARBOUR_WEST, HARBOUR_EAST).with_ssids(&["Noodle Republic"]),
                seg(10, Stationary, HARBOUR_EAST, HARBOUR_EAST).with_ssids(&["Gallery 88"]),
                seg(10, Walking, HARBOUR_EAST, PROMENADE).with_ssids(&["Clocktower Cafe"]),
                seg(10, Stationary, PROMENADE, PROMENADE).with_ssids(&["Orchid Market"]),
                seg(10, Walking, PROMENADE, PIER).with_ssids(&["Pier Seven"]),
            ],
        },
    ]
}

pub fn builtin_scenario(name: &str) -> Option<Scenario> {
    builtin_scenarios().into_iter().find(|s| s.name == name)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::motion::{detect_motion, MotionThresholds};
    use crate::trace::{extract_features, DutyCycleConfig};

    #[test]
    fn stationary_scenario_counts_windows() {
        let scenario = Scenario {
            name: "rest".into(),
            reference_text: "resting".into(),
            segments: vec![seg(10, MotionLabel::Stationary, CAFE, CAFE)],
        };
        let trace = generate_synthetic_trace(&scenario, 1, 0.0).unwrap();
        assert_eq!(trace.bursts.len(), 10);
        assert!(trace
            .truths
            .iter()
            .all(|t| t.label == MotionLabel::Stationary));
    }

    #[test]
    fn same_seed_same_bytes() {
        let scenario = builtin_scenario("country_hike").unwrap();
        let a = generate_synthetic_trace(&scenario, 42, DEFAULT_START_EPOCH).unwrap();
        let b = generate_synthetic_trace(&scenario, 42, DEFAULT_START_EPOCH).unwrap();
        assert_eq!(a.to_jsonl(), b.to_jsonl());
        let c = generate_synthetic_trace(&scenario, 43, DEFAULT_START_EPOCH).unwrap();
        assert_ne!(a.to_jsonl(), c.to_jsonl());
    }

    #[test]
    fn invalid_ranges_are_rejected() {
        let mut scenario = builtin_scenario("quiet_evening").unwrap();
        scenario.segments[0].ranges.speed = (0.0, 3.0);
        assert!(matches!(
            generate_synthetic_trace(&scenario, 1, 0.0),
            Err(SimError::InvalidScenario(_))
        ));
        let empty = Scenario {
            name: "x".into(),
            reference_text: "x".into(),
            segments: vec![],
        };
        assert!(validate_scenario(&empty).is_err());
    }

    #[test]
    fn hike_windows_classify_to_script() {
        let scenario = builtin_scenario("country_hike").unwrap();
        let trace = generate_synthetic_trace(&scenario, 7, DEFAULT_START_EPOCH).unwrap();
        let duty = DutyCycleConfig::default();
        let thresholds = MotionThresholds::default();
        for (burst, truth) in trace.bursts.iter().zip(&trace.truths) {
            let features = extract_features(burst, &duty).unwrap();
            let ctx = detect_motion(&features, &thresholds);
            assert_eq!(
                ctx.labels,
                vec![truth.label],
                "window {} features {features:?}",
                truth.index
            );
        }
    }

    #[test]
    fn gps_denied_windows_keep_truth_as_candidate() {
        let scenario = builtin_scenario("subway_commute").unwrap();
        let trace = generate_synthetic_trace(&scenario, 3, DEFAULT_START_EPOCH).unwrap();
        let duty = DutyCycleConfig::default();
        let thresholds = MotionThresholds::default();
        for (burst, truth) in trace.bursts.iter().zip(&trace.truths) {
            let features = extract_features(burst, &duty).unwrap();
            assert_eq!(features.speed_valid, truth.gps_valid);
            let ctx = detect_motion(&features, &thresholds);
            assert!(
                ctx.labels.contains(&truth.label),
                "window {}: {:?} missing {}",
                truth.index,
                ctx.labels,
                truth.label
            );
            if !truth.gps_valid {
                assert!(ctx.ambiguous);
            }
        }
    }

    #[test]
    fn walking_features_match_scripted_ranges() {
        let scenario = builtin_scenario("seaside_morning").unwrap();
        let trace = generate_synthetic_trace(&scenario, 5, DEFAULT_START_EPOCH).unwrap();
        let duty = DutyCycleConfig::default();
        let features = extract_features(&trace.bursts[0], &duty).unwrap();
        assert!(
            features.s >= 60.0 && features.s <= 112.0,
            "s={}",
            features.s
        );
        assert!(features.v >= 0.8 && features.v <= 1.44, "v={}", features.v);
        assert!(features.delta_h.abs() < 0.5, "dh={}", features.delta_h);
        assert!(features.a > 0.12, "a={}", features.a);
        assert!(features.location_valid && features.speed_valid);
    }

    #[test]
    fn builtin_catalog_is_valid_and_large_enough() {
        let scenarios = builtin_scenarios();
        assert!(scenarios.len() >= 10);
        let mut windows = 0;
        for scenario in &scenarios {
            validate_scenario(scenario).unwrap();
            windows += scenario
                .segments
                .iter()
                .map(|s| s.minutes as usize)
                .sum::<usize>();
        }
        assert!(windows >= 600, "only {windows} windows scripted");
    }
}
