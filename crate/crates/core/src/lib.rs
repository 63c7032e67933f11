//! Life journaling from duty-cycled smartphone sensor traces.
//!
//! The pipeline turns a recorded trace into natural-language journals in
//! layers: per-window feature extraction and rule-based motion detection,
//! map- and SSID-derived location contexts through a provider gateway,
//! batched LLM refinement and motion calibration, and finally journal
//! generation with a cleaning pass. Replay and mock providers make every
//! stage runnable and testable fully offline.

pub mod config;
pub mod context;
pub mod eval;
pub mod geo;
pub mod journal;
pub mod llm;
pub mod motion;
pub mod pipeline;
pub mod trace;
