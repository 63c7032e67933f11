//! Token and cost accounting for provider calls.
//!
//! Token counts are integers; money is kept as exact rationals (dollars per
//! million tokens times token counts) and only converted to floating point
//! for display, rendered to two significant figures.

use std::collections::BTreeMap;

use num_rational::Ratio;
use num_traits::ToPrimitive;
use serde::Serialize;
use thiserror::Error;

/// Exact dollar amount (or rate) as a rational number.
pub type Money = Ratio<u128>;

#[derive(Debug, Error, PartialEq)]
pub enum LedgerError {
    #[error("no unit prices configured for model {0}")]
    MissingPrice(String),
    #[error("invalid price literal {0:?}")]
    BadPrice(String),
}

/// Parses a non-negative decimal literal ("0.15") into an exact rational.
pub fn parse_price(text: &str) -> Result<Money, LedgerError> {
    let bad = || LedgerError::BadPrice(text.to_string());
    let t = text.trim();
    let (int_part, frac_part) = match t.split_once('.') {
        Some((i, f)) => (i, f),
        None => (t, ""),
    };
    if int_part.is_empty() && frac_part.is_empty() {
        return Err(bad());
    }
    let int: u128 = if int_part.is_empty() {
        0
    } else {
        int_part.parse().map_err(|_| bad())?
    };
    if frac_part.len() > 12 || !frac_part.chars().all(|c| c.is_ascii_digit()) {
        return Err(bad());
    }
    let denom = 10u128.pow(frac_part.len() as u32);
    let frac: u128 = if frac_part.is_empty() {
        0
    } else {
        frac_part.parse().map_err(|_| bad())?
    };
    Ok(Ratio::new(int * denom + frac, denom))
}

/// Per-model unit prices in dollars per 10^6 input / output tokens.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UnitPrices {
    pub input_per_mtok: Money,
    pub output_per_mtok: Money,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct Usage {
    pub model: String,
    pub calls: u64,
    pub input_tokens: u64,
    pub output_tokens: u64,
}

/// Accumulates per-template call and token counts.
#[derive(Debug, Default, Clone)]
pub struct CostLedger {
    rows: BTreeMap<String, Usage>,
    prices: BTreeMap<String, UnitPrices>,
}

impl CostLedger {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set_price(&mut self, model: &str, prices: UnitPrices) {
        self.prices.insert(model.to_string(), prices);
    }

    pub fn record(&mut self, template: &str, model: &str, input_tokens: u64, output_tokens: u64) {
        let row = self.rows.entry(template.to_string()).or_default();
        row.model = model.to_string();
        row.calls += 1;
        row.input_tokens += input_tokens;
        row.output_tokens += output_tokens;
    }

    pub fn usage(&self, template: &str) -> Option<&Usage> {
        self.rows.get(template)
    }

    pub fn rows(&self) -> impl Iterator<Item = (&str, &Usage)> {
        self.rows.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn total_calls(&self) -> u64 {
        self.rows.values().map(|u| u.calls).sum()
    }

    fn prices_for(&self, model: &str) -> Result<&UnitPrices, LedgerError> {
        self.prices
            .get(model)
            .ok_or_else(|| LedgerError::MissingPrice(model.to_string()))
    }

    /// Exact dollars per hour for one template at `calls_per_hour`, using the
    /// template's average per-call token counts.
    pub fn hourly_cost(&self, template: &str, calls_per_hour: Money) -> Result<Money, LedgerError> {
        let usage = match self.rows.get(template) {
            Some(u) if u.calls > 0 => u,
            _ => return Ok(Ratio::from_integer(0)),
        };
        let prices = self.prices_for(&usage.model)?;
        let calls = Ratio::from_integer(usage.calls as u128);
        let avg_in = Ratio::from_integer(usage.input_tokens as u128) / calls;
        let avg_out = Ratio::from_integer(usage.output_tokens as u128) / calls;
        let per_call = (avg_in * prices.input_per_mtok + avg_out * prices.output_per_mtok)
            / Ratio::from_integer(1_000_000);
        Ok(per_call * calls_per_hour)
    }
}

/// One rendered report row.
#[derive(Debug, Clone, Serialize)]
pub struct LedgerRow {
    pub template: String,
    pub model: String,
    pub calls: u64,
    pub input_tokens: u64,
    pub output_tokens: u64,
    pub calls_per_hour: f64,
    pub dollars_per_hour: f64,
    pub dollars_per_hour_display: String,
    #[serde(skip)]
    pub exact: Money,
}

#[derive(Debug, Clone, Serialize)]
pub struct LedgerReport {
    pub rows: Vec<LedgerRow>,
    pub total_dollars_per_hour: f64,
    pub total_display: String,
    pub note: Option<String>,
}

const BATCH_STAGE_NOTE: &str = "note: the batched fusion and calibration stages are costed at the \
frequencies given here; their per-hour prices at the recorded token usage correspond to one call \
per hour, while four 15-minute batches per hour would cost four times as much.";

/// Renders a value to two significant figures in scientific notation.
pub fn format_two_sig(value: f64) -> String {
    if value == 0.0 {
        return "0".to_string();
    }
    let exponent = value.abs().log10().floor() as i32;
    let mut mantissa = value / 10f64.powi(exponent);
    let mut exponent = exponent;
    mantissa = (mantissa * 10.0).round() / 10.0;
    if mantissa.abs() >= 10.0 {
        mantissa /= 10.0;
        exponent += 1;
    }
    format!("{mantissa:.1}e{exponent}")
}

/// Computes the per-template and total dollars-per-hour report.
///
/// `frequencies` gives calls per hour per template; templates without an
/// entry fall back to their recorded call count per hour of the run only if
/// provided by the caller, otherwise a frequency of 0 drops the row cost.
pub fn ledger_report(
    ledger: &CostLedger,
    frequencies: &BTreeMap<String, Money>,
) -> Result<LedgerReport, LedgerError> {
    let mut rows = Vec::new();
    let mut total: Money = Ratio::from_integer(0);
    let mut has_batched_stage = false;
    for (template, usage) in ledger.rows() {
        let freq = frequencies
            .get(template)
            .copied()
            .unwrap_or_else(|| Ratio::from_integer(0));
        let exact = ledger.hourly_cost(template, freq)?;
        total += exact;
        if template == super::template::ids::LOCATION_FUSION
            || template == super::template::ids::MOTION_CALIBRATION
        {
            has_batched_stage = true;
        }
        let dollars = exact.to_f64().unwrap_or(0.0);
        rows.push(LedgerRow {
            template: template.to_string(),
            model: usage.model.clone(),
            calls: usage.calls,
            input_tokens: usage.input_tokens,
            output_tokens: usage.output_tokens,
            calls_per_hour: freq.to_f64().unwrap_or(0.0),
            dollars_per_hour: dollars,
            dollars_per_hour_display: format_two_sig(dollars),
            exact,
        });
    }
    let total_f = total.to_f64().unwrap_or(0.0);
    Ok(LedgerReport {
        rows,
        total_dollars_per_hour: total_f,
        total_display: format_two_sig(total_f),
        note: has_batched_stage.then(|| BATCH_STAGE_NOTE.to_string()),
    })
}

impl LedgerReport {
    /// Plain-text table for the run output directory.
    pub fn render_table(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "{:<20} {:<14} {:>6} {:>10} {:>11} {:>9} {:>10}\n",
            "template", "model", "calls", "in_tokens", "out_tokens", "calls/hr", "$/hr"
        ));
        for row in &self.rows {
            out.push_str(&format!(
                "{:<20} {:<14} {:>6} {:>10} {:>11} {:>9.2} {:>10}\n",
                row.template,
                row.model,
                row.calls,
                row.input_tokens,
                row.output_tokens,
                row.calls_per_hour,
                row.dollars_per_hour_display
            ));
        }
        out.push_str(&format!("total: {} $/hr\n", self.total_display));
        if let Some(note) = &self.note {
            out.push_str(note);
            out.push('\n');
        }
        out
    }
}
