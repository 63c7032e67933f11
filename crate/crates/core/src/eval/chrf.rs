//! Character n-gram F-score.
//!
//! Whitespace is stripped, character n-grams of order 1..=6 are counted on
//! both sides, and precision/recall are averaged across orders before the
//! F-beta combination with beta = 2 (recall-weighted). Scores are in [0, 1].

use std::collections::HashMap;

use thiserror::Error;

pub const MAX_ORDER: usize = 6;
pub const BETA: f64 = 2.0;

#[derive(Debug, Error, PartialEq)]
pub enum ChrfError {
    #[error("{0} text is empty after whitespace normalization")]
    EmptyText(&'static str),
}

fn strip_whitespace(text: &str) -> Vec<char> {
    text.chars().filter(|c| !c.is_whitespace()).collect()
}

fn ngram_counts(chars: &[char], n: usize) -> HashMap<&[char], u32> {
    let mut counts: HashMap<&[char], u32> = HashMap::new();
    if chars.len() >= n {
        for gram in chars.windows(n) {
            *counts.entry(gram).or_insert(0) += 1;
        }
    }
    counts
}

/// chrF score of `candidate` against `reference`.
pub fn chrf(candidate: &str, reference: &str) -> Result<f64, ChrfError> {
    let cand = strip_whitespace(candidate);
    let reference = strip_whitespace(reference);
    if cand.is_empty() {
        return Err(ChrfError::EmptyText("candidate"));
    }
    if reference.is_empty() {
        return Err(ChrfError::EmptyText("reference"));
    }

    let mut precision_sum = 0.0;
    let mut recall_sum = 0.0;
    let mut effective_orders = 0u32;
    for n in 1..=MAX_ORDER {
        let cand_counts = ngram_counts(&cand, n);
        let ref_counts = ngram_counts(&reference, n);
        let total_cand: u32 = cand_counts.values().sum();
        let total_ref: u32 = ref_counts.values().sum();
        if total_cand == 0 && total_ref == 0 {
            // Neither side has n-grams of this order (short texts).
            continue;
        }
        let matched: u32 = cand_counts
            .iter()
            .map(|(gram, &c)| c.min(ref_counts.get(gram).copied().unwrap_or(0)))
            .sum();
        effective_orders += 1;
        if total_cand > 0 {
            precision_sum += matched as f64 / total_cand as f64;
        }
        if total_ref > 0 {
            recall_sum += matched as f64 / total_ref as f64;
        }
    }
    if effective_orders == 0 {
        return Ok(0.0);
    }
    let precision = precision_sum / effective_orders as f64;
    let recall = recall_sum / effective_orders as f64;
    let beta2 = BETA * BETA;
    let denom = beta2 * precision + recall;
    if denom == 0.0 {
        return Ok(0.0);
    }
    Ok((1.0 + beta2) * precision * recall / denom)
}
