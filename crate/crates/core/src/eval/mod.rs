//! Evaluation harness: native chrF scoring, hallucination accounting, and a
//! benchmark runner over (trace, reference-journal) experiment directories.
//!
//! Dataset layout: one directory per experiment containing `trace.jsonl`,
//! `ref1.txt`, optional `ref2.txt`, and optional `fixtures/` with `maps/`
//! and `llm/` subdirectories that override the configured fixture sources.
//! Scores take the best over the available references. Contextual-embedding
//! metrics are delegated to an external scorer through a pair-file hook
//! rather than computed natively.

pub mod chrf;
pub mod sim;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Serialize;
use thiserror::Error;

use crate::config::RunConfig;
use crate::geo::ContextCache;
use crate::pipeline::{run, FallbackCounts, RunMode, RunOutput};
use crate::trace::parse_trace;

pub use chrf::{chrf, ChrfError};
pub use sim::{
    builtin_scenario, builtin_scenarios, generate_synthetic_trace, FeatureRanges, Scenario,
    Segment, SimError, SyntheticTrace, WindowTruth, DEFAULT_START_EPOCH,
};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("dataset io: {0}")]
    Io(#[from] std::io::Error),
    #[error("dataset dir {0} contains no experiment directories")]
    EmptyDataset(PathBuf),
    #[error("config: {0}")]
    Config(String),
    #[error("external scores line {0}: expected `experiment<TAB>score`")]
    BadScoreLine(usize),
}

/// One mode's outcome for one experiment.
#[derive(Debug, Clone, Serialize)]
pub struct ModeScore {
    pub chrf: Option<f64>,
    /// Index (1-based) of the best-matching reference.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub best_reference: Option<usize>,
    pub hallucinated: bool,
    pub windows: usize,
    pub fallbacks: FallbackCounts,
}

#[derive(Debug, Clone, Serialize)]
pub struct ExperimentRow {
    pub name: String,
    /// Error text when the experiment could not run at all.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub failed: Option<String>,
    pub scores: BTreeMap<String, ModeScore>,
    /// Score ingested from the external scorer hook, if any.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub external: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ModeAggregate {
    pub experiments: usize,
    pub mean_chrf: Option<f64>,
    pub hallucination_rate: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct EvalReport {
    pub rows: Vec<ExperimentRow>,
    pub aggregates: BTreeMap<String, ModeAggregate>,
}

fn mode_name(mode: RunMode) -> &'static str {
    match mode {
        RunMode::Pipeline => "pipeline",
        RunMode::Baseline => "baseline",
    }
}

fn read_references(dir: &Path) -> std::io::Result<Vec<String>> {
    let mut refs = Vec::new();
    for name in ["ref1.txt", "ref2.txt"] {
        let path = dir.join(name);
        if path.is_file() {
            refs.push(std::fs::read_to_string(&path)?);
        }
    }
    Ok(refs)
}

/// Best chrF over the references; `None` when the candidate is empty.
pub fn best_of_references(candidate: &str, references: &[String]) -> (Option<f64>, Option<usize>) {
    let mut best: Option<(f64, usize)> = None;
    for (idx, reference) in references.iter().enumerate() {
        if let Ok(score) = chrf(candidate, reference) {
            if best.is_none_or(|(b, _)| score > b) {
                best = Some((score, idx + 1));
            }
        }
    }
    (best.map(|(s, _)| s), best.map(|(_, i)| i))
}

fn run_experiment(
    exp_dir: &Path,
    base_cfg: &RunConfig,
    mode: RunMode,
    work_dir: &Path,
) -> Result<(RunOutput, ModeScore), String> {
    let mut cfg = base_cfg.clone();
    let fixtures = exp_dir.join("fixtures");
    if fixtures.join("maps").is_dir() {
        cfg.map_fixture_dir = Some(fixtures.join("maps"));
    }
    if fixtures.join("llm").is_dir() {
        cfg.llm_fixture_dir = Some(fixtures.join("llm"));
    }
    cfg.cache_path = work_dir.join("cache.tsv");

    let trace_path = exp_dir.join("trace.jsonl");
    let file =
        std::fs::File::open(&trace_path).map_err(|e| format!("{}: {e}", trace_path.display()))?;
    let bursts = parse_trace(std::io::BufReader::new(file)).map_err(|e| e.to_string())?;

    let gateway = cfg.build_gateway().map_err(|e| e.to_string())?;
    let map_provider = cfg.build_map_provider().map_err(|e| e.to_string())?;
    let cache = ContextCache::open(&cfg.cache_path).map_err(|e| e.to_string())?;
    let output =
        run(bursts, &cfg, &gateway, map_provider, cache, mode).map_err(|e| e.to_string())?;

    let references = read_references(exp_dir).map_err(|e| e.to_string())?;
    let candidate = output.combined_journal_text();
    let (score, best_reference) = best_of_references(&candidate, &references);
    let hallucinated = output.journals.iter().any(|j| j.hallucinated);
    let mode_score = ModeScore {
        chrf: score,
        best_reference,
        hallucinated,
        windows: output.report.windows,
        fallbacks: output.report.fallbacks.clone(),
    };
    Ok((output, mode_score))
}

/// Runs every experiment in `dataset_dir` under each mode and scores the
/// journals against the bundled references. Per-experiment failures are
/// isolated into their row; the sweep itself never aborts.
pub fn run_benchmark(
    dataset_dir: &Path,
    cfg: &RunConfig,
    modes: &[RunMode],
    out_dir: &Path,
) -> Result<EvalReport, EvalError> {
    let mut experiment_dirs: Vec<PathBuf> = std::fs::read_dir(dataset_dir)?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.is_dir())
        .collect();
    experiment_dirs.sort();
    if experiment_dirs.is_empty() {
        return Err(EvalError::EmptyDataset(dataset_dir.to_path_buf()));
    }

    let mut rows = Vec::new();
    let mut pairs = String::new();
    for exp_dir in &experiment_dirs {
        let name = exp_dir
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default();
        let mut row = ExperimentRow {
            name: name.clone(),
            failed: None,
            scores: BTreeMap::new(),
            external: None,
        };
        for &mode in modes {
            let work_dir = out_dir.join(&name).join(mode_name(mode));
            if let Err(e) = std::fs::create_dir_all(&work_dir) {
                row.failed = Some(e.to_string());
                continue;
            }
            match run_experiment(exp_dir, cfg, mode, &work_dir) {
                Ok((output, score)) => {
                    if let Err(e) = output.write(&work_dir) {
                        row.failed = Some(e.to_string());
                        continue;
                    }
                    // Scorer hook pair file: experiment, mode, reference
                    // index, candidate, reference (tabs/newlines escaped).
                    if let Ok(references) = read_references(exp_dir) {
                        let candidate = output.combined_journal_text();
                        for (idx, reference) in references.iter().enumerate() {
                            pairs.push_str(&format!(
                                "{}\t{}\t{}\t{}\t{}\n",
                                name,
                                mode_name(mode),
                                idx + 1,
                                escape_tsv(&candidate),
                                escape_tsv(reference)
                            ));
                        }
                    }
                    row.scores.insert(mode_name(mode).to_string(), score);
                }
                Err(e) => {
                    row.failed = Some(e);
                }
            }
        }
        rows.push(row);
    }

    let mut aggregates = BTreeMap::new();
    for &mode in modes {
        let name = mode_name(mode);
        let scored: Vec<&ModeScore> = rows.iter().filter_map(|r| r.scores.get(name)).collect();
        let with_chrf: Vec<f64> = scored.iter().filter_map(|s| s.chrf).collect();
        aggregates.insert(
            name.to_string(),
            ModeAggregate {
                experiments: scored.len(),
                mean_chrf: if with_chrf.is_empty() {
                    None
                } else {
                    Some(with_chrf.iter().sum::<f64>() / with_chrf.len() as f64)
                },
                hallucination_rate: if scored.is_empty() {
                    0.0
                } else {
                    scored.iter().filter(|s| s.hallucinated).count() as f64 / scored.len() as f64
                },
            },
        );
    }

    let report = EvalReport { rows, aggregates };
    std::fs::create_dir_all(out_dir)?;
    std::fs::write(out_dir.join("pairs.tsv"), pairs)?;
    std::fs::write(
        out_dir.join("eval_report.json"),
        serde_json::to_string_pretty(&report).expect("report serializes"),
    )?;
    std::fs::write(out_dir.join("eval_table.txt"), report.render_table())?;
    Ok(report)
}

fn escape_tsv(text: &str) -> String {
    text.replace('\\', "\\\\")
        .replace('\t', "\\t")
        .replace('\n', "\\n")
}

/// Ingests `experiment<TAB>score` lines from an external scorer and merges
/// them into the report rows.
pub fn ingest_external_scores(report: &mut EvalReport, path: &Path) -> Result<(), EvalError> {
    let text = std::fs::read_to_string(path)?;
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let (name, score) = line
            .split_once('\t')
            .ok_or(EvalError::BadScoreLine(idx + 1))?;
        let score: f64 = score
            .trim()
            .parse()
            .map_err(|_| EvalError::BadScoreLine(idx + 1))?;
        if let Some(row) = report.rows.iter_mut().find(|r| r.name == name) {
            row.external = Some(score);
        }
    }
    Ok(())
}

impl EvalReport {
    pub fn render_table(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "{:<24} {:<10} {:>8} {:>7} {:>9} {:>9}\n",
            "experiment", "mode", "chrf", "hall.", "windows", "external"
        ));
        for row in &self.rows {
            if let Some(err) = &row.failed {
                out.push_str(&format!("{:<24} FAILED: {err}\n", row.name));
            }
            for (mode, score) in &row.scores {
                out.push_str(&format!(
                    "{:<24} {:<10} {:>8} {:>7} {:>9} {:>9}\n",
                    row.name,
                    mode,
                    score.chrf.map_or("-".to_string(), |v| format!("{v:.3}")),
                    score.hallucinated,
                    score.windows,
                    row.external.map_or("-".to_string(), |v| format!("{v:.3}")),
                ));
            }
        }
        for (mode, agg) in &self.aggregates {
            out.push_str(&format!(
                "aggregate[{mode}]: experiments={} mean_chrf={} hallucination_rate={:.3}\n",
                agg.experiments,
                agg.mean_chrf.map_or("-".to_string(), |v| format!("{v:.3}")),
                agg.hallucination_rate
            ));
        }
        out
    }
}
