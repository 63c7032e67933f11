//! End-to-end pipeline behavior over the bundled sample experiment:
//! baseline mode, mock-to-replay round trips, and benchmark sweeps.

use std::path::{Path, PathBuf};

use lifejournal::config::RunConfig;
use lifejournal::eval::run_benchmark;
use lifejournal::geo::ContextCache;
use lifejournal::pipeline::{run, RunMode, RunOutput};
use lifejournal::trace::parse_trace;

fn sample_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../sample/dataset/seaside-morning")
}

fn sample_bursts() -> Vec<lifejournal::trace::SensorBurst> {
    let file = std::fs::File::open(sample_dir().join("trace.jsonl")).unwrap();
    parse_trace(std::io::BufReader::new(file)).unwrap()
}

fn sample_config(work: &Path) -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.map_fixture_dir = Some(sample_dir().join("fixtures/maps"));
    cfg.cache_path = work.join("cache.tsv");
    cfg.utc_offset_minutes = 480;
    cfg
}

fn run_with(cfg: &RunConfig, mode: RunMode) -> RunOutput {
    let gateway = cfg.build_gateway().unwrap();
    let map_provider = cfg.build_map_provider().unwrap();
    let cache = ContextCache::open(&cfg.cache_path).unwrap();
    run(sample_bursts(), cfg, &gateway, map_provider, cache, mode).unwrap()
}

#[test]
fn baseline_mode_is_one_call_no_contexts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = sample_config(dir.path());
    let output = run_with(&cfg, RunMode::Baseline);
    assert_eq!(output.journals.len(), 1);
    assert_eq!(output.transcript.len(), 1);
    assert_eq!(output.transcript[0].template, "baseline_journal");
    assert!(output.context_log.is_empty());
    // The raw log carries the scanned network names through to the journal.
    assert!(output.combined_journal_text().contains("Pacific Coffee"));
    let ledger = &output.report.ledger;
    assert_eq!(ledger.rows.len(), 1);
    assert_eq!(ledger.rows[0].calls, 1);
}

#[test]
fn pipeline_journals_one_generate_one_clean_per_horizon() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = sample_config(dir.path());
    let output = run_with(&cfg, RunMode::Pipeline);
    let horizons = output.report.horizons.len();
    assert!(horizons >= 2);
    let count = |template: &str| {
        output
            .transcript
            .iter()
            .filter(|e| e.template == template)
            .count()
    };
    assert_eq!(count("journal_generation"), horizons);
    assert_eq!(count("journal_cleaning"), horizons);
    // Refinement batches: ceil(windows / 15).
    assert_eq!(count("location_fusion"), output.report.windows.div_ceil(15));
}

#[test]
fn concise_instruction_keeps_refinement_output_short() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = sample_config(dir.path());
    let output = run_with(&cfg, RunMode::Pipeline);
    let fusions: Vec<_> = output
        .transcript
        .iter()
        .filter(|e| e.template == "location_fusion")
        .collect();
    assert!(!fusions.is_empty());
    for exchange in fusions {
        assert!(exchange.prompt.contains("concise"));
        // Refined text never exceeds the raw concatenated contexts it fused.
        let input_len: usize = exchange
            .prompt
            .lines()
            .filter(|l| l.starts_with('[') && !l.contains("](map location context"))
            .map(str::len)
            .sum();
        let output_len = exchange.summary.as_deref().map_or(0, str::len);
        assert!(
            output_len <= input_len,
            "refined {output_len} chars from {input_len} input chars"
        );
    }
}

#[test]
fn recorded_fixtures_replay_bit_identically() {
    let dir = tempfile::tempdir().unwrap();
    let mock_cfg = sample_config(&dir.path().join("mock"));
    std::fs::create_dir_all(dir.path().join("mock")).unwrap();
    let recorded = run_with(&mock_cfg, RunMode::Pipeline);
    let fixtures = dir.path().join("llm-fixtures");
    recorded.record_llm_fixtures(&fixtures).unwrap();

    let replay_root = dir.path().join("replay");
    std::fs::create_dir_all(&replay_root).unwrap();
    let mut replay_cfg = sample_config(&replay_root);
    replay_cfg.llm_fixture_dir = Some(fixtures);
    for role in ["map_vlm", "ssid_llm", "main_llm"] {
        replay_cfg
            .set(&format!("provider.{role}.kind"), "replay")
            .unwrap();
        // Same model id so request digests line up with the recording.
        replay_cfg
            .set(&format!("provider.{role}.model"), "offline-mock")
            .unwrap();
    }
    let replayed = run_with(&replay_cfg, RunMode::Pipeline);

    assert_eq!(
        recorded.combined_journal_text(),
        replayed.combined_journal_text()
    );
    let ids = |o: &RunOutput| {
        o.transcript
            .iter()
            .map(|e| e.id.clone())
            .collect::<Vec<_>>()
    };
    assert_eq!(ids(&recorded), ids(&replayed));
    let responses = |o: &RunOutput| {
        o.transcript
            .iter()
            .map(|e| e.response.clone())
            .collect::<Vec<_>>()
    };
    assert_eq!(responses(&recorded), responses(&replayed));
}

#[test]
fn benchmark_scores_both_modes_and_writes_artifacts() {
    let work = tempfile::tempdir().unwrap();
    let out = work.path().join("out");
    let cfg = {
        let mut cfg = RunConfig::default();
        cfg.utc_offset_minutes = 480;
        cfg
    };
    let dataset = sample_dir().parent().unwrap().to_path_buf();
    let report = run_benchmark(
        &dataset,
        &cfg,
        &[RunMode::Pipeline, RunMode::Baseline],
        &out,
    )
    .unwrap();
    assert_eq!(report.rows.len(), 1);
    let row = &report.rows[0];
    assert!(row.failed.is_none());
    let pipeline = &row.scores["pipeline"];
    let baseline = &row.scores["baseline"];
    assert!(pipeline.chrf.unwrap() > 0.0);
    assert!(baseline.chrf.unwrap() > 0.0);
    assert!(!pipeline.hallucinated && !baseline.hallucinated);
    assert_eq!(report.aggregates.len(), 2);

    for file in ["pairs.tsv", "eval_report.json", "eval_table.txt"] {
        assert!(out.join(file).is_file(), "{file} missing");
    }
    let pairs = std::fs::read_to_string(out.join("pairs.tsv")).unwrap();
    // Two references, two modes: four pair lines.
    assert_eq!(pairs.lines().count(), 4);
    assert!(out.join("seaside-morning/pipeline/report.json").is_file());
}

#[test]
fn benchmark_isolates_a_corrupt_experiment() {
    let work = tempfile::tempdir().unwrap();
    let dataset = work.path().join("dataset");

    let good = dataset.join("a-good");
    std::fs::create_dir_all(&good).unwrap();
    for entry in std::fs::read_dir(sample_dir()).unwrap() {
        let entry = entry.unwrap();
        if entry.path().is_file() {
            std::fs::copy(entry.path(), good.join(entry.file_name())).unwrap();
        }
    }
    let bad = dataset.join("b-corrupt");
    std::fs::create_dir_all(&bad).unwrap();
    std::fs::write(
        bad.join("trace.jsonl"),
        "{\"start_time\": \"not a number\"}\n",
    )
    .unwrap();
    std::fs::write(bad.join("ref1.txt"), "irrelevant").unwrap();

    let mut cfg = RunConfig::default();
    cfg.utc_offset_minutes = 480;
    // The good experiment has no fixtures/ dir; degrade its maps silently.
    cfg.map_fixture_dir = Some(work.path().join("empty-maps"));
    std::fs::create_dir_all(work.path().join("empty-maps")).unwrap();

    let report = run_benchmark(
        &dataset,
        &cfg,
        &[RunMode::Pipeline],
        &work.path().join("out"),
    )
    .unwrap();
    assert_eq!(report.rows.len(), 2);
    assert!(report.rows[0].failed.is_none(), "good row failed");
    assert!(report.rows[0].scores["pipeline"].chrf.is_some());
    let failure = report.rows[1]
        .failed
        .as_deref()
        .expect("corrupt row must fail");
    assert!(
        failure.contains("line 1"),
        "failure lacks context: {failure}"
    );
    assert!(report.rows[1].scores.is_empty());
    // Aggregates are exact means of the scored rows.
    assert_eq!(report.aggregates["pipeline"].experiments, 1);
    assert_eq!(
        report.aggregates["pipeline"].mean_chrf,
        report.rows[0].scores["pipeline"].chrf
    );
}

#[test]
fn missing_llm_fixtures_fail_horizons_not_the_run() {
    // Replay providers with an empty fixture directory: every text call
    // misses. Context stages degrade per window/batch and journaling fails
    // per horizon, but the run itself completes and reports everything.
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = sample_config(dir.path());
    let empty = dir.path().join("no-fixtures");
    std::fs::create_dir_all(&empty).unwrap();
    cfg.llm_fixture_dir = Some(empty);
    for role in ["map_vlm", "ssid_llm", "main_llm"] {
        cfg.set(&format!("provider.{role}.kind"), "replay").unwrap();
    }
    let output = run_with(&cfg, RunMode::Pipeline);
    assert!(output.journals.is_empty());
    assert!(!output.report.horizons.is_empty());
    for horizon in &output.report.horizons {
        let err = horizon
            .error
            .as_deref()
            .expect("horizon must report its failure");
        assert!(err.contains("fixture"), "unexpected error: {err}");
    }
    // With no context source succeeding, every window is contextless, so
    // refinement has nothing to call; the degradation shows up per stage.
    assert!(output.report.fallbacks.ssid_windows > 0);
    assert_eq!(
        output.report.grid.map_fallbacks,
        output.report.grid.distinct_cells
    );
    assert!(output
        .context_log
        .iter()
        .all(|e| e.location_text == "unknown"));
}

#[test]
fn stride_reduces_windows_and_calls() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = sample_config(dir.path());
    cfg.sampling_stride = 4;
    let output = run_with(&cfg, RunMode::Pipeline);
    assert_eq!(output.report.windows, sample_bursts().len().div_ceil(4));
    assert_eq!(output.report.config.sampling_stride, 4);
}
