//! Command-line front end: `run`, `batch`, `verify` and `list`.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::Serialize;

use crate::environment::BUILTIN_MAPS;
use crate::error::{Error, Result};
use crate::sim_engine::{run_source, RunOptions, RunOutcome, ScenarioSource, TerminationReason, BUILTIN_SCENARIOS};
use crate::verify::{run_suite, Suite, SuiteSizes};

pub const EXIT_OK: i32 = 0;
pub const EXIT_NOT_REACHED: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_AUDIT: i32 = 3;
pub const EXIT_CRASH: i32 = 4;
pub const EXIT_SUITE: i32 = 5;

#[derive(Debug, Parser)]
#[command(name = "safenav", version, about = "Safety-filtered LiDAR navigation simulator")]
pub struct Cli {
    /// Log more (repeat for debug output).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one scenario and write its trajectory and report.
    Run(RunArgs),
    /// Run every scenario matching a glob and write a summary table.
    Batch(BatchArgs),
    /// Run the randomized property suites.
    Verify(VerifyArgs),
    /// List bundled scenarios and maps.
    List,
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    /// Scenario file, or the name of a bundled scenario.
    #[arg(long)]
    pub scenario: String,
    #[arg(long)]
    pub out: PathBuf,
    /// Override a scenario key, e.g. `--set filter.gamma=150` (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Replace existing output files.
    #[arg(long)]
    pub force: bool,
    /// Dump every perception frame under `<out>/frames/`.
    #[arg(long)]
    pub frames: bool,
}

#[derive(Debug, Clone, Args)]
pub struct BatchArgs {
    /// Glob over scenario files; falls back to bundled scenario names.
    #[arg(long = "scenarios", alias = "scenario")]
    pub pattern: String,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Scenarios run concurrently; defaults to the number of cores.
    #[arg(long)]
    pub jobs: Option<usize>,
    #[arg(long)]
    pub force: bool,
    #[arg(long)]
    pub frames: bool,
}

#[derive(Debug, Clone, Args)]
pub struct VerifyArgs {
    /// all, softmin, eta, derivatives, qp or containment.
    #[arg(long, default_value = "all")]
    pub suite: String,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Use a tenth of the default case counts.
    #[arg(long)]
    pub quick: bool,
}

/// Parsed inputs of a single run.
#[derive(Debug, Clone)]
pub struct RunManifest {
    pub scenario: String,
    pub out: PathBuf,
    pub overrides: Vec<String>,
    pub force: bool,
    pub frames: bool,
}

impl From<RunArgs> for RunManifest {
    fn from(a: RunArgs) -> Self {
        Self {
            scenario: a.scenario,
            out: a.out,
            overrides: a.overrides,
            force: a.force,
            frames: a.frames,
        }
    }
}

pub fn exit_code_for_error(e: &Error) -> i32 {
    match e {
        Error::SimulationFault(_) => EXIT_CRASH,
        _ => EXIT_USAGE,
    }
}

/// Exit status of a finished run.
pub fn exit_code_for_outcome(outcome: &RunOutcome) -> i32 {
    let r = &outcome.report;
    match r.reason {
        TerminationReason::Crash | TerminationReason::NonFinite => EXIT_CRASH,
        _ if !r.audit.passed() => EXIT_AUDIT,
        _ if !r.reached => EXIT_NOT_REACHED,
        _ => EXIT_OK,
    }
}

pub fn run(cli: Cli) -> i32 {
    let result = match cli.command {
        Command::Run(args) => cmd_run(&args.into()),
        Command::Batch(args) => cmd_batch(&args),
        Command::Verify(args) => cmd_verify(&args),
        Command::List => {
            cmd_list();
            Ok(EXIT_OK)
        }
    };
    result.unwrap_or_else(|e| {
        eprintln!("error: {e}");
        exit_code_for_error(&e)
    })
}

const OUTPUTS: [&str; 3] = ["trajectory.csv", "report.json", "frames"];

fn prepare_out_dir(out: &Path, force: bool) -> Result<()> {
    if !force {
        if let Some(existing) = OUTPUTS.iter().map(|n| out.join(n)).find(|p| p.exists()) {
            return Err(Error::usage(format!(
                "{} already exists; pass --force to overwrite",
                existing.display()
            )));
        }
    }
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let frames = out.join("frames");
    if frames.is_dir() {
        fs::remove_dir_all(&frames).map_err(|e| Error::io(&frames, e))?;
    }
    Ok(())
}

fn open_with_overrides(reference: &str, overrides: &[String]) -> Result<ScenarioSource> {
    let mut source = ScenarioSource::open(reference)?;
    for o in overrides {
        source.config.apply_override(o)?;
    }
    source.config.validate()?;
    Ok(source)
}

fn execute(source: &ScenarioSource, out: &Path, force: bool, frames: bool) -> Result<RunOutcome> {
    prepare_out_dir(out, force)?;
    let frames_dir = out.join("frames");
    let options = RunOptions {
        frames_dir: frames.then_some(frames_dir.as_path()),
    };
    let outcome = run_source(source, &options)?;
    outcome.log.save_csv(&out.join("trajectory.csv"))?;
    outcome.report.save_json(&out.join("report.json"))?;
    Ok(outcome)
}

pub fn cmd_run(manifest: &RunManifest) -> Result<i32> {
    let source = open_with_overrides(&manifest.scenario, &manifest.overrides)?;
    let outcome = execute(&source, &manifest.out, manifest.force, manifest.frames)?;
    let r = &outcome.report;
    println!(
        "{}: {:?} after {:.2} s, reached={}, min h={:.4}, filter active {:.1}% of steps, audit {}",
        r.scenario,
        r.reason,
        r.final_time,
        r.reached,
        r.min_h,
        100.0 * r.active_fraction,
        if r.audit.passed() { "clean" } else { "FAILED" }
    );
    Ok(exit_code_for_outcome(&outcome))
}

/// One row of `summary.csv`.
#[derive(Debug, Clone, Serialize)]
pub struct SummaryRow {
    pub scenario: String,
    pub reached: bool,
    pub time_to_goal: Option<f64>,
    pub min_h: Option<f64>,
    pub min_psi0: Option<f64>,
    pub min_xi: Option<f64>,
    pub min_phi: Option<f64>,
    pub max_abs_u1: Option<f64>,
    pub max_abs_u2: Option<f64>,
    pub max_abs_v: Option<f64>,
    pub active_fraction: Option<f64>,
    pub outcome: String,
    pub exit_code: i32,
}

impl SummaryRow {
    fn from_outcome(label: String, o: &RunOutcome) -> Self {
        let r = &o.report;
        let min = |v: &[f64]| v.iter().copied().fold(f64::INFINITY, f64::min);
        Self {
            scenario: label,
            reached: r.reached,
            time_to_goal: r.time_to_goal,
            min_h: Some(r.min_h),
            min_psi0: Some(r.min_psi0),
            min_xi: Some(min(&r.min_xi)),
            min_phi: Some(min(&r.min_phi)),
            max_abs_u1: Some(r.max_abs_u1),
            max_abs_u2: Some(r.max_abs_u2),
            max_abs_v: Some(r.max_abs_v),
            active_fraction: Some(r.active_fraction),
            outcome: serde_json::to_value(r.reason)
                .ok()
                .and_then(|v| v.as_str().map(str::to_string))
                .unwrap_or_default(),
            exit_code: exit_code_for_outcome(o),
        }
    }

    fn from_error(label: String, e: &Error) -> Self {
        Self {
            scenario: label,
            reached: false,
            time_to_goal: None,
            min_h: None,
            min_psi0: None,
            min_xi: None,
            min_phi: None,
            max_abs_u1: None,
            max_abs_u2: None,
            max_abs_v: None,
            active_fraction: None,
            outcome: format!("error: {e}"),
            exit_code: exit_code_for_error(e),
        }
    }
}

/// Scenario references matching `pattern`: files first, then bundled names.
pub fn expand_pattern(pattern: &str) -> Result<Vec<String>> {
    let mut files: Vec<String> = glob::glob(pattern)
        .map_err(|e| Error::usage(format!("bad glob `{pattern}`: {e}")))?
        .filter_map(|p| p.ok())
        .filter(|p| p.is_file())
        .map(|p| p.to_string_lossy().into_owned())
        .collect();
    files.sort();
    if !files.is_empty() {
        return Ok(files);
    }
    let pat = glob::Pattern::new(pattern).map_err(|e| Error::usage(format!("bad glob `{pattern}`: {e}")))?;
    let names: Vec<String> = BUILTIN_SCENARIOS
        .iter()
        .map(|(n, _)| n.to_string())
        .filter(|n| pat.matches(n))
        .collect();
    if names.is_empty() {
        return Err(Error::usage(format!("no scenario matches `{pattern}`")));
    }
    Ok(names)
}

fn unique_labels(refs: &[String]) -> Vec<String> {
    let mut seen: Vec<String> = Vec::new();
    refs.iter()
        .map(|r| {
            let stem = Path::new(r)
                .file_stem()
                .and_then(|s| s.to_str())
                .unwrap_or(r)
                .to_string();
            let mut label = stem.clone();
            let mut i = 2;
            while seen.contains(&label) {
                label = format!("{stem}_{i}");
                i += 1;
            }
            seen.push(label.clone());
            label
        })
        .collect()
}

pub fn cmd_batch(args: &BatchArgs) -> Result<i32> {
    let refs = expand_pattern(&args.pattern)?;
    let labels = unique_labels(&refs);
    let summary_path = args.out.join("summary.csv");
    if summary_path.exists() && !args.force {
        return Err(Error::usage(format!(
            "{} already exists; pass --force to overwrite",
            summary_path.display()
        )));
    }
    fs::create_dir_all(&args.out).map_err(|e| Error::io(&args.out, e))?;

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(args.jobs.unwrap_or(0))
        .build()
        .map_err(|e| Error::usage(format!("cannot start worker pool: {e}")))?;
    let rows: Vec<SummaryRow> = pool.install(|| {
        refs.par_iter()
            .zip(labels.par_iter())
            .map(|(reference, label)| {
                let result = open_with_overrides(reference, &args.overrides)
                    .and_then(|s| execute(&s, &args.out.join(label), args.force, args.frames));
                match result {
                    Ok(o) => SummaryRow::from_outcome(label.clone(), &o),
                    Err(e) => {
                        eprintln!("{label}: {e}");
                        SummaryRow::from_error(label.clone(), &e)
                    }
                }
            })
            .collect()
    });

    let mut w = csv::Writer::from_path(&summary_path)?;
    for row in &rows {
        w.serialize(row)?;
        println!("{:<24} reached={:<5} {}", row.scenario, row.reached, row.outcome);
    }
    w.flush().map_err(|e| Error::io(&summary_path, e))?;
    Ok(batch_exit_code(rows.iter().map(|r| r.exit_code)))
}

/// The most severe status among the rows; crashes outrank audit failures,
/// which outrank usage problems and unreached goals.
fn batch_exit_code(codes: impl Iterator<Item = i32>) -> i32 {
    let rank = |c: i32| match c {
        EXIT_CRASH => 4,
        EXIT_AUDIT => 3,
        EXIT_USAGE => 2,
        EXIT_NOT_REACHED => 1,
        _ => 0,
    };
    codes.max_by_key(|&c| rank(c)).unwrap_or(EXIT_OK)
}

pub fn cmd_verify(args: &VerifyArgs) -> Result<i32> {
    let suites = Suite::parse(&args.suite)?;
    let mut sizes = SuiteSizes::default();
    if args.quick {
        sizes = SuiteSizes {
            soft_vectors: sizes.soft_vectors / 10,
            derivative_states: sizes.derivative_states / 10,
            qp_instances: sizes.qp_instances / 10,
            qp_samples: sizes.qp_samples / 10,
            containment_configs: sizes.containment_configs / 10,
            containment_grid: sizes.containment_grid / 2,
        };
    }
    let mut failed = false;
    for suite in suites {
        let report = run_suite(suite, &sizes, args.seed)?;
        println!("{report}");
        failed |= !report.passed();
    }
    Ok(if failed { EXIT_SUITE } else { EXIT_OK })
}

pub fn cmd_list() {
    println!("bundled scenarios:");
    for (name, _) in BUILTIN_SCENARIOS {
        println!("  {name}");
    }
    println!("bundled maps:");
    for (name, _) in BUILTIN_MAPS {
        println!("  {name}");
    }
}
