//! Command-line entry point: run the pipeline, evaluate datasets, generate
//! synthetic traces, inspect the context cache, and poke the motion rules.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use lifejournal::config::RunConfig;
use lifejournal::eval::{
    builtin_scenario, builtin_scenarios, generate_synthetic_trace, ingest_external_scores,
    run_benchmark, DEFAULT_START_EPOCH,
};
use lifejournal::geo::ContextCache;
use lifejournal::motion::{detect_motion, MotionThresholds};
use lifejournal::pipeline::{run, RunMode};
use lifejournal::trace::{parse_trace, WindowFeatures};

#[derive(Parser)]
#[command(
    name = "lifejournal",
    version,
    about = "Life journals from duty-cycled smartphone sensor traces",
    long_about = "Turns recorded sensor traces into natural-language life journals: \
                  per-window feature extraction and rule-based motion detection, map/SSID \
                  location contexts through LLM providers, batched context refinement, and \
                  journal generation with a cleaning pass.\n\
                  Defaults: 15 s collection every 60 s, 15-window refinement batches, \
                  hourly journals."
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// Flat `key = value` config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override a config key (repeatable), e.g. --set sampling.stride=16.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl ConfigArgs {
    fn load(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::load(path).context("loading config file")?,
            None => RunConfig::default(),
        };
        for assignment in &self.overrides {
            let (key, value) = assignment
                .split_once('=')
                .with_context(|| format!("--set {assignment}: expected KEY=VALUE"))?;
            cfg.set(key.trim(), value.trim())
                .with_context(|| format!("--set {assignment}"))?;
        }
        cfg.validate().map_err(|e| anyhow::anyhow!("{e}"))?;
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run the journaling pipeline (or the raw-sensor baseline) on a trace.
    Run {
        /// Trace file (newline-delimited burst records).
        trace: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
        /// pipeline | baseline
        #[arg(long, default_value = "pipeline")]
        mode: String,
        /// Output directory for journals, transcript, report, and ledger.
        #[arg(long)]
        out: PathBuf,
        /// Allow writing into a non-empty output directory.
        #[arg(long)]
        force: bool,
    },
    /// Score journal generation against reference journals over a dataset.
    Eval {
        /// Dataset directory: one subdirectory per experiment with
        /// trace.jsonl, ref1.txt, optional ref2.txt and fixtures/.
        dataset: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
        /// pipeline | baseline | both
        #[arg(long, default_value = "pipeline")]
        mode: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        force: bool,
        /// Scores from an external scorer (`experiment<TAB>score` lines).
        #[arg(long)]
        external_scores: Option<PathBuf>,
    },
    /// Generate a synthetic labeled trace from a built-in scenario.
    Simulate {
        /// Scenario name; see --list.
        #[arg(long)]
        scenario: Option<String>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output directory for trace.jsonl and labels.tsv.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Trace start time in epoch seconds.
        #[arg(long, default_value_t = DEFAULT_START_EPOCH)]
        start: f64,
        /// List available scenarios and exit.
        #[arg(long)]
        list: bool,
    },
    /// Inspect or clear the persistent location-context cache.
    Cache {
        #[command(subcommand)]
        action: CacheAction,
    },
    /// Classify one window of features and print the candidate labels.
    Motion {
        /// Steps per minute.
        #[arg(long)]
        steps: f64,
        /// Mean linear acceleration, m/s².
        #[arg(long)]
        accel: f64,
        /// Altitude change over the window, meters.
        #[arg(long)]
        delta_h: f64,
        /// Horizontal speed, m/s.
        #[arg(long)]
        speed: f64,
        /// Treat speed as unknown (no usable GPS).
        #[arg(long)]
        no_speed: bool,
        /// Treat altitude change as unknown (no barometer).
        #[arg(long)]
        no_altitude: bool,
    },
}

#[derive(Subcommand)]
enum CacheAction {
    /// Print entry and file-line counts.
    Stats {
        #[arg(long)]
        path: PathBuf,
    },
    /// Truncate the cache. Requires --yes.
    Clear {
        #[arg(long)]
        path: PathBuf,
        #[arg(long)]
        yes: bool,
    },
}

fn ensure_out_dir(out: &Path, force: bool) -> Result<()> {
    if out.exists() {
        let non_empty = std::fs::read_dir(out)
            .with_context(|| format!("reading {}", out.display()))?
            .next()
            .is_some();
        if non_empty && !force {
            bail!(
                "output directory {} is not empty; pass --force to write into it",
                out.display()
            );
        }
    } else {
        std::fs::create_dir_all(out)?;
    }
    Ok(())
}

fn cmd_run(trace: &Path, config: &ConfigArgs, mode: &str, out: &Path, force: bool) -> Result<()> {
    let mode: RunMode = mode.parse().map_err(|e: String| anyhow::anyhow!(e))?;
    let cfg = config.load()?;
    ensure_out_dir(out, force)?;

    let file =
        std::fs::File::open(trace).with_context(|| format!("opening trace {}", trace.display()))?;
    let bursts = parse_trace(std::io::BufReader::new(file)).context("parsing trace")?;

    let gateway = cfg.build_gateway().context("building providers")?;
    let map_provider = cfg.build_map_provider().context("building map provider")?;
    let cache = ContextCache::open(&cfg.cache_path)
        .with_context(|| format!("opening cache {}", cfg.cache_path.display()))?;

    let output = run(bursts, &cfg, &gateway, map_provider, cache, mode)?;
    output.write(out)?;

    println!(
        "wrote {} journal(s) to {} ({} windows, hallucination rate {:.3})",
        output.journals.len(),
        out.display(),
        output.report.windows,
        output.report.hallucination_rate
    );
    println!("total cost: {} $/hr", output.report.ledger.total_display);
    Ok(())
}

fn cmd_eval(
    dataset: &Path,
    config: &ConfigArgs,
    mode: &str,
    out: &Path,
    force: bool,
    external_scores: Option<&Path>,
) -> Result<()> {
    let modes: Vec<RunMode> = match mode {
        "both" => vec![RunMode::Pipeline, RunMode::Baseline],
        other => vec![other.parse().map_err(|e: String| anyhow::anyhow!(e))?],
    };
    let cfg = config.load()?;
    ensure_out_dir(out, force)?;
    let mut report = run_benchmark(dataset, &cfg, &modes, out)?;
    if let Some(path) = external_scores {
        ingest_external_scores(&mut report, path).context("ingesting external scores")?;
        std::fs::write(
            out.join("eval_report.json"),
            serde_json::to_string_pretty(&report)?,
        )?;
        std::fs::write(out.join("eval_table.txt"), report.render_table())?;
    }
    print!("{}", report.render_table());
    Ok(())
}

fn cmd_simulate(
    scenario: Option<&str>,
    seed: u64,
    out: Option<&Path>,
    start: f64,
    list: bool,
) -> Result<()> {
    if list {
        for s in builtin_scenarios() {
            let minutes: u32 = s.segments.iter().map(|seg| seg.minutes).sum();
            println!("{:<20} {:>4} min  {}", s.name, minutes, s.reference_text);
        }
        return Ok(());
    }
    let name = scenario.context("--scenario is required (or use --list)")?;
    let scenario = builtin_scenario(name)
        .with_context(|| format!("unknown scenario {name}; use --list to see the catalog"))?;
    let out = out.context("--out is required")?;
    std::fs::create_dir_all(out)?;
    let trace = generate_synthetic_trace(&scenario, seed, start)?;
    std::fs::write(out.join("trace.jsonl"), trace.to_jsonl())?;
    std::fs::write(out.join("labels.tsv"), trace.labels_tsv())?;
    std::fs::write(out.join("ref1.txt"), scenario.reference_text.trim())?;
    println!(
        "wrote {} windows to {} (scenario {}, seed {seed})",
        trace.bursts.len(),
        out.display(),
        scenario.name
    );
    Ok(())
}

fn cmd_cache(action: &CacheAction) -> Result<()> {
    match action {
        CacheAction::Stats { path } => {
            let cache = ContextCache::open(path)?;
            println!(
                "{}: {} entries ({} distinct cells), {} file lines",
                path.display(),
                cache.len(),
                cache.len(),
                cache.file_lines()?
            );
        }
        CacheAction::Clear { path, yes } => {
            if !yes {
                bail!("refusing to clear {} without --yes", path.display());
            }
            let mut cache = ContextCache::open(path)?;
            let removed = cache.len();
            cache.clear()?;
            println!("cleared {} entries from {}", removed, path.display());
        }
    }
    Ok(())
}

fn cmd_motion(steps: f64, accel: f64, delta_h: f64, speed: f64, no_speed: bool, no_altitude: bool) {
    let features = WindowFeatures {
        time: 0.0,
        s: steps,
        a: accel,
        delta_h,
        v: speed,
        location: None,
        ssids: Vec::new(),
        speed_valid: !no_speed,
        location_valid: false,
        altitude_valid: !no_altitude,
    };
    let ctx = detect_motion(&features, &MotionThresholds::default());
    for label in &ctx.labels {
        println!("{label}");
    }
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    match &cli.command {
        Command::Run {
            trace,
            config,
            mode,
            out,
            force,
        } => cmd_run(trace, config, mode, out, *force),
        Command::Eval {
            dataset,
            config,
            mode,
            out,
            force,
            external_scores,
        } => cmd_eval(
            dataset,
            config,
            mode,
            out,
            *force,
            external_scores.as_deref(),
        ),
        Command::Simulate {
            scenario,
            seed,
            out,
            start,
            list,
        } => cmd_simulate(scenario.as_deref(), *seed, out.as_deref(), *start, *list),
        Command::Cache { action } => cmd_cache(action),
        Command::Motion {
            steps,
            accel,
            delta_h,
            speed,
            no_speed,
            no_altitude,
        } => {
            cmd_motion(*steps, *accel, *delta_h, *speed, *no_speed, *no_altitude);
            Ok(())
        }
    }
}
