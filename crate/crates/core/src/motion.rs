//! Rule-based multi-label motion detection.
//!
//! A window's four features (step rate, linear acceleration, altitude
//! change, horizontal speed) pass through a fixed rule chain: an exclusive
//! stationary / limited-motion pair followed by independent checks for the
//! active modes. Windows whose sensors are inconclusive legitimately yield
//! several candidate labels; a later LLM pass narrows them using location
//! context.

use crate::trace::WindowFeatures;
use serde::{Deserialize, Serialize};

/// The closed set of motion labels the rules can emit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MotionLabel {
    Stationary,
    LimitedMotion,
    JoggingRunning,
    Walking,
    Cycling,
    VehicleSubwayFerryTrain,
    EscalatorElevator,
}

impl MotionLabel {
    pub const ALL: [MotionLabel; 7] = [
        MotionLabel::Stationary,
        MotionLabel::LimitedMotion,
        MotionLabel::JoggingRunning,
        MotionLabel::Walking,
        MotionLabel::Cycling,
        MotionLabel::VehicleSubwayFerryTrain,
        MotionLabel::EscalatorElevator,
    ];

    /// Human-readable label text, as fed to prompts and logs.
    pub fn as_str(&self) -> &'static str {
        match self {
            MotionLabel::Stationary => "stationary",
            MotionLabel::LimitedMotion => "limited motion",
            MotionLabel::JoggingRunning => "jogging/running",
            MotionLabel::Walking => "walking",
            MotionLabel::Cycling => "cycling",
            MotionLabel::VehicleSubwayFerryTrain => "vehicle/subway/ferry/train",
            MotionLabel::EscalatorElevator => "escalator/elevator",
        }
    }

    pub fn parse(text: &str) -> Option<MotionLabel> {
        let t = text.trim().to_lowercase();
        MotionLabel::ALL.iter().copied().find(|l| l.as_str() == t)
    }
}

impl std::fmt::Display for MotionLabel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Per-window motion detection result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MotionContext {
    /// Epoch seconds.
    pub time: f64,
    /// Candidate labels in rule order; possibly empty.
    pub labels: Vec<MotionLabel>,
    /// True exactly when the label list is not a singleton.
    pub ambiguous: bool,
}

impl MotionContext {
    /// Rendered label text: single label, "a or b" for multiple candidates,
    /// "unknown" for none.
    pub fn render(&self) -> String {
        match self.labels.len() {
            0 => "unknown".to_string(),
            1 => self.labels[0].as_str().to_string(),
            _ => self
                .labels
                .iter()
                .map(|l| l.as_str())
                .collect::<Vec<_>>()
                .join(" or "),
        }
    }
}

/// Rule thresholds. Defaults are the published constants; overridable only
/// through the expert section of the config file.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MotionThresholds {
    pub stationary_max_steps: f64,
    pub stationary_max_accel: f64,
    pub stationary_max_dh: f64,
    pub stationary_max_speed: f64,
    pub limited_max_steps: f64,
    pub limited_max_dh: f64,
    pub limited_max_speed: f64,
    pub jogging_min_steps: f64,
    pub jogging_min_speed: f64,
    pub jogging_max_speed: f64,
    pub walking_min_steps: f64,
    pub walking_max_speed: f64,
    pub cycling_min_steps: f64,
    pub cycling_min_speed: f64,
    pub vehicle_max_steps: f64,
    pub vehicle_min_speed: f64,
    pub vehicle_any_speed: f64,
    pub escalator_max_steps: f64,
    pub escalator_min_dh: f64,
    pub escalator_max_speed: f64,
}

impl Default for MotionThresholds {
    fn default() -> Self {
        MotionThresholds {
            stationary_max_steps: 2.0,
            stationary_max_accel: 0.1,
            stationary_max_dh: 0.1,
            stationary_max_speed: 0.1,
            limited_max_steps: 10.0,
            limited_max_dh: 1.0,
            limited_max_speed: 0.5,
            jogging_min_steps: 140.0,
            jogging_min_speed: 2.0,
            jogging_max_speed: 5.0,
            walking_min_steps: 50.0,
            walking_max_speed: 1.8,
            cycling_min_steps: 50.0,
            cycling_min_speed: 4.0,
            vehicle_max_steps: 5.0,
            vehicle_min_speed: 2.0,
            vehicle_any_speed: 5.0,
            escalator_max_steps: 10.0,
            escalator_min_dh: 2.5,
            escalator_max_speed: 2.0,
        }
    }
}

/// One pass of the rule chain with a concrete speed value.
fn rules(
    s: f64,
    a: f64,
    dh: f64,
    v: f64,
    altitude_known: bool,
    th: &MotionThresholds,
) -> Vec<MotionLabel> {
    let mut labels = Vec::new();
    if s <= th.stationary_max_steps
        && a <= th.stationary_max_accel
        && dh.abs() <= th.stationary_max_dh
        && v <= th.stationary_max_speed
    {
        labels.push(MotionLabel::Stationary);
    } else if s <= th.limited_max_steps && dh.abs() <= th.limited_max_dh && v < th.limited_max_speed
    {
        labels.push(MotionLabel::LimitedMotion);
    }
    if s >= th.jogging_min_steps && v >= th.jogging_min_speed && v <= th.jogging_max_speed {
        labels.push(MotionLabel::JoggingRunning);
    }
    if s >= th.walking_min_steps && v < th.walking_max_speed {
        labels.push(MotionLabel::Walking);
    }
    if s >= th.cycling_min_steps && v >= th.cycling_min_speed {
        labels.push(MotionLabel::Cycling);
    }
    if (s <= th.vehicle_max_steps && v > th.vehicle_min_speed) || v > th.vehicle_any_speed {
        labels.push(MotionLabel::VehicleSubwayFerryTrain);
    }
    // The escalator rule needs a *known* climb; with no barometer the branch
    // is suppressed rather than guessed.
    if altitude_known
        && s <= th.escalator_max_steps
        && dh > th.escalator_min_dh
        && v < th.escalator_max_speed
    {
        labels.push(MotionLabel::EscalatorElevator);
    }
    labels
}

/// Classifies one window.
///
/// With no valid GPS speed the rules run twice, once with v = 0 and once
/// with v = +inf, and the union of both label sets (in rule order) is
/// returned: indoors the sensors genuinely cannot distinguish, say, resting
/// from riding a subway, and keeping both hypotheses lets the calibration
/// pass resolve them. `ambiguous` is true exactly when the result is not a
/// singleton.
pub fn detect_motion(features: &WindowFeatures, thresholds: &MotionThresholds) -> MotionContext {
    let dh = if features.altitude_valid {
        features.delta_h
    } else {
        0.0
    };
    let labels = if features.speed_valid {
        rules(
            features.s,
            features.a,
            dh,
            features.v,
            features.altitude_valid,
            thresholds,
        )
    } else {
        let low = rules(
            features.s,
            features.a,
            dh,
            0.0,
            features.altitude_valid,
            thresholds,
        );
        let high = rules(
            features.s,
            features.a,
            dh,
            f64::INFINITY,
            features.altitude_valid,
            thresholds,
        );
        let mut union = low;
        for label in high {
            if !union.contains(&label) {
                union.push(label);
            }
        }
        union.sort_by_key(|l| MotionLabel::ALL.iter().position(|a| a == l).unwrap());
        union
    };
    MotionContext {
        time: features.time,
        ambiguous: labels.len() != 1,
        labels,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn features(s: f64, a: f64, dh: f64, v: f64) -> WindowFeatures {
        WindowFeatures {
            time: 0.0,
            s,
            a,
            delta_h: dh,
            v,
            location: None,
            ssids: Vec::new(),
            speed_valid: true,
            location_valid: false,
            altitude_valid: true,
        }
    }

    fn labels(s: f64, a: f64, dh: f64, v: f64) -> Vec<MotionLabel> {
        detect_motion(&features(s, a, dh, v), &MotionThresholds::default()).labels
    }

    #[test]
    fn stationary_window() {
        assert_eq!(labels(0.0, 0.0, 0.0, 0.0), vec![MotionLabel::Stationary]);
    }

    #[test]
    fn fast_cadence_is_jogging_or_cycling() {
        assert_eq!(
            labels(150.0, 1.5, 0.0, 4.5),
            vec![MotionLabel::JoggingRunning, MotionLabel::Cycling]
        );
    }

    #[test]
    fn high_speed_no_steps_is_vehicle() {
        assert_eq!(
            labels(0.0, 0.05, 0.0, 10.0),
            vec![MotionLabel::VehicleSubwayFerryTrain]
        );
    }

    #[test]
    fn climb_without_steps_is_escalator() {
        assert_eq!(
            labels(3.0, 0.3, 3.0, 0.5),
            vec![MotionLabel::EscalatorElevator]
        );
    }

    #[test]
    fn normal_cadence_is_walking() {
        assert_eq!(labels(60.0, 0.8, 0.0, 1.0), vec![MotionLabel::Walking]);
    }

    #[test]
    fn invalid_speed_unions_both_extremes() {
        let mut f = features(0.0, 0.0, 0.0, 0.0);
        f.speed_valid = false;
        let ctx = detect_motion(&f, &MotionThresholds::default());
        assert_eq!(
            ctx.labels,
            vec![
                MotionLabel::Stationary,
                MotionLabel::VehicleSubwayFerryTrain
            ]
        );
        assert!(ctx.ambiguous);
    }

    #[test]
    fn invalid_altitude_suppresses_escalator() {
        let mut f = features(3.0, 0.3, 3.0, 0.5);
        f.altitude_valid = false;
        let ctx = detect_motion(&f, &MotionThresholds::default());
        assert!(!ctx.labels.contains(&MotionLabel::EscalatorElevator));
    }

    #[test]
    fn label_text_round_trips() {
        for label in MotionLabel::ALL {
            assert_eq!(MotionLabel::parse(label.as_str()), Some(label));
        }
        assert_eq!(MotionLabel::parse("Walking "), Some(MotionLabel::Walking));
        assert_eq!(MotionLabel::parse("flying"), None);
    }

    #[test]
    fn render_joins_candidates() {
        let ctx = MotionContext {
            time: 0.0,
            labels: vec![MotionLabel::Walking, MotionLabel::Cycling],
            ambiguous: true,
        };
        assert_eq!(ctx.render(), "walking or cycling");
        let empty = MotionContext {
            time: 0.0,
            labels: vec![],
            ambiguous: true,
        };
        assert_eq!(empty.render(), "unknown");
    }

    proptest! {
        #[test]
        fn outputs_are_duplicate_free_subsets(
            s in 0.0f64..250.0,
            a in 0.0f64..5.0,
            dh in -30.0f64..30.0,
            v in 0.0f64..40.0,
            speed_valid in proptest::bool::ANY,
            altitude_valid in proptest::bool::ANY,
        ) {
            let mut f = features(s, a, dh, v);
            f.speed_valid = speed_valid;
            f.altitude_valid = altitude_valid;
            let ctx = detect_motion(&f, &MotionThresholds::default());
            let mut seen = std::collections::HashSet::new();
            for label in &ctx.labels {
                prop_assert!(seen.insert(*label));
                prop_assert!(MotionLabel::ALL.contains(label));
            }
            prop_assert_eq!(ctx.ambiguous, ctx.labels.len() != 1);

            // Threshold-provable exclusions.
            let has = |l: MotionLabel| ctx.labels.contains(&l);
            if speed_valid {
                prop_assert!(!(has(MotionLabel::Stationary) && has(MotionLabel::VehicleSubwayFerryTrain)));
                prop_assert!(!(has(MotionLabel::Walking) && has(MotionLabel::JoggingRunning)));
                prop_assert!(!(has(MotionLabel::Walking) && has(MotionLabel::Cycling)));
            }
            prop_assert!(!(has(MotionLabel::Stationary) && has(MotionLabel::LimitedMotion)));

            // Pure function: identical features, identical labels.
            let again = detect_motion(&f, &MotionThresholds::default());
            prop_assert_eq!(ctx, again);
        }
    }
}
