//! Journal assembly: long-duration context logs in, prose out.
//!
//! One journaling horizon (an hour by default) yields exactly two calls: a
//! generation call over the assembled context log and a cleaning call that
//! strips subjective commentary from the draft. The raw-sensor baseline mode
//! serializes features directly into a single call instead.

use std::collections::HashMap;

use serde::Serialize;
use thiserror::Error;

use crate::context::ContextLogEntry;
use crate::llm::{template::ids, Gateway, GatewayError, LlmExchange, Role};
use crate::trace::{format_hhmm, WindowFeatures};

#[derive(Debug, Error)]
pub enum JournalError {
    #[error("journaling horizon contains no entries")]
    EmptyHorizon,
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}

/// Which engine produced a journal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum JournalSource {
    /// The full multi-layer pipeline.
    Pipeline,
    /// The raw-sensor-log single-call baseline.
    Baseline,
}

/// One generated journal with its provenance.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Journal {
    /// Covered period in epoch seconds.
    pub period: (f64, f64),
    pub source: JournalSource,
    pub draft_text: String,
    pub final_text: String,
    pub hallucinated: bool,
    /// True when the cleaning reply hallucinated and the draft was kept.
    pub cleaning_fallback: bool,
    /// Exchange ids backing this journal, in call order.
    pub exchange_ids: Vec<String>,
}

/// Renders a horizon's entries as the comma-joined bracketed context log.
pub fn assemble_context_log(entries: &[ContextLogEntry]) -> Result<String, JournalError> {
    if entries.is_empty() {
        return Err(JournalError::EmptyHorizon);
    }
    Ok(entries
        .iter()
        .map(ContextLogEntry::render)
        .collect::<Vec<_>>()
        .join(", "))
}

/// Generates the draft journal for one horizon.
pub fn generate_journal(
    log_text: &str,
    period_label: &str,
    gateway: &Gateway,
) -> Result<LlmExchange, JournalError> {
    if log_text.is_empty() {
        return Err(JournalError::EmptyHorizon);
    }
    let mut bindings = HashMap::new();
    bindings.insert("logs", log_text.to_string());
    bindings.insert("period", period_label.to_string());
    Ok(gateway.complete(Role::MainLlm, ids::JOURNAL_GENERATION, &bindings, None)?)
}

/// Runs the cleaning pass over a non-hallucinated draft. A hallucinated
/// cleaning reply keeps the draft (fallback, reported by the caller).
pub fn clean_journal(draft: &str, gateway: &Gateway) -> Result<LlmExchange, JournalError> {
    let mut bindings = HashMap::new();
    bindings.insert("draft", draft.to_string());
    Ok(gateway.complete(Role::MainLlm, ids::JOURNAL_CLEANING, &bindings, None)?)
}

/// Generates draft + cleaned journal for one horizon's entries. Returns the
/// journal and the underlying exchanges for the transcript.
pub fn journal_for_horizon(
    entries: &[ContextLogEntry],
    period: (f64, f64),
    period_label: &str,
    gateway: &Gateway,
) -> Result<(Journal, Vec<LlmExchange>), JournalError> {
    let log_text = assemble_context_log(entries)?;
    let generation = generate_journal(&log_text, period_label, gateway)?;
    let exchange_ids = vec![generation.id.clone()];
    match generation.summary.clone() {
        None => Ok((
            Journal {
                period,
                source: JournalSource::Pipeline,
                draft_text: String::new(),
                final_text: String::new(),
                hallucinated: true,
                cleaning_fallback: false,
                exchange_ids,
            },
            vec![generation],
        )),
        Some(draft) => {
            let cleaning = clean_journal(&draft, gateway)?;
            let mut exchange_ids = exchange_ids;
            exchange_ids.push(cleaning.id.clone());
            let (final_text, cleaning_fallback) = match cleaning.summary.clone() {
                Some(cleaned) => (cleaned, false),
                None => (draft.clone(), true),
            };
            Ok((
                Journal {
                    period,
                    source: JournalSource::Pipeline,
                    draft_text: draft,
                    final_text,
                    hallucinated: false,
                    cleaning_fallback,
                    exchange_ids,
                },
                vec![generation, cleaning],
            ))
        }
    }
}

/// Serializes one window for the baseline prompt:
/// `t=HH:MM steps=.. acc=.. dh=.. v=.. ssids=[..] gps=(lat,lon)`.
pub fn baseline_log_line(features: &WindowFeatures, utc_offset_minutes: i32) -> String {
    let gps = match features.location {
        Some((lat, lon)) => format!("({lat:.5},{lon:.5})"),
        None => "none".to_string(),
    };
    format!(
        "t={} steps={:.0} acc={:.2} dh={:.1} v={:.2} ssids=[{}] gps={}",
        format_hhmm(features.time, utc_offset_minutes),
        features.s,
        features.a,
        features.delta_h,
        features.v,
        features.ssids.join(", "),
        gps
    )
}

/// The raw-sensor baseline: every window's features serialized
/// chronologically into one prompt and answered with a single call. No
/// cleaning pass.
pub fn baseline_journal(
    features: &[WindowFeatures],
    utc_offset_minutes: i32,
    gateway: &Gateway,
) -> Result<(Journal, LlmExchange), JournalError> {
    if features.is_empty() {
        return Err(JournalError::EmptyHorizon);
    }
    let lines: Vec<String> = features
        .iter()
        .map(|f| baseline_log_line(f, utc_offset_minutes))
        .collect();
    let start = features[0].time;
    let end = features[features.len() - 1].time;
    let period_label = format!(
        "{} to {}",
        format_hhmm(start, utc_offset_minutes),
        format_hhmm(end, utc_offset_minutes)
    );
    let mut bindings = HashMap::new();
    bindings.insert("logs", lines.join("\n"));
    bindings.insert("period", period_label);
    let exchange = gateway.complete(Role::MainLlm, ids::BASELINE_JOURNAL, &bindings, None)?;
    let hallucinated = exchange.hallucinated;
    let text = exchange.summary.clone().unwrap_or_default();
    let journal = Journal {
        period: (start, end),
        source: JournalSource::Baseline,
        draft_text: text.clone(),
        final_text: text,
        hallucinated,
        cleaning_fallback: false,
        exchange_ids: vec![exchange.id.clone()],
    };
    Ok((journal, exchange))
}
