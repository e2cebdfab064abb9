use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use swapsim::config::{parse_multi_model_with_warnings, Diagnostic, Severity};
use swapsim::engine::{union_columns, SimulationResult};
use swapsim::log::{CsvLog, SegmentedCsv};
use swapsim::scenarios::{Scenario, ScenarioName};
use swapsim::transfer::{Candidate, DirectoryTransferSource, ScriptedTransfers, TransferSource};
use swapsim::units::{BrokerFeed, FaultRule, ModelRegistry, SharedFeed};
use swapsim::{validate_config, MultiModelConfig, RunOptions, Simulation};

#[derive(Parser)]
#[command(
    name = "swapsim",
    version,
    about = "Fixed-step co-simulation with runtime model swapping"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a multi-model configuration and write a CSV log.
    Run(RunArgs),
    /// Check a configuration, and optionally a swap spec against it.
    Validate {
        #[arg(long)]
        config: PathBuf,
        /// Swap spec to check against the initialized configuration.
        #[arg(long)]
        spec: Option<PathBuf>,
        /// Broker feed CSV (`timestamp,value`).
        #[arg(long)]
        feed: Option<PathBuf>,
    },
    /// Run a bundled scenario.
    Scenario {
        #[arg(value_parser = parse_scenario)]
        name: ScenarioName,
        /// Time in seconds from which the scenario's swap spec is available.
        #[arg(long)]
        transfer_at: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    start: f64,
    #[arg(long)]
    end: f64,
    #[arg(long)]
    step: f64,
    #[arg(long)]
    out: PathBuf,
    /// Directory watched for swap specs (`*.json`). Each new configuration
    /// starts a new CSV segment.
    #[arg(long, conflicts_with = "schedule")]
    transfer_dir: Option<PathBuf>,
    /// JSON list of `{"time": seconds, "spec": path}` offered at fixed times.
    #[arg(long)]
    schedule: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    min_steps: u64,
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
    check_every: u64,
    /// Fault rule file.
    #[arg(long)]
    faults: Option<PathBuf>,
    /// Broker feed CSV (`timestamp,value`).
    #[arg(long)]
    feed: Option<PathBuf>,
}

fn parse_scenario(s: &str) -> Result<ScenarioName, String> {
    s.parse()
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ScheduleEntry {
    time: f64,
    spec: PathBuf,
}

fn read(path: &Path) -> Result<String, String> {
    fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))
}

fn registry(feed: Option<&Path>) -> Result<ModelRegistry, String> {
    let feed = match feed {
        Some(p) => Some(BrokerFeed::from_path(p).map_err(|e| format!("{}: {e}", p.display()))?),
        None => None,
    };
    Ok(ModelRegistry::builtin(feed.map(SharedFeed::new)))
}

fn load_config(path: &Path) -> Result<MultiModelConfig, String> {
    let (cfg, warnings) =
        parse_multi_model_with_warnings(&read(path)?).map_err(|e| format!("{}: {e}", path.display()))?;
    for w in warnings {
        eprintln!("warning: {w}");
    }
    Ok(cfg)
}

fn report(diags: &[Diagnostic]) {
    for d in diags {
        eprintln!("{d}");
    }
}

fn create(path: &Path) -> Result<BufWriter<File>, String> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| format!("{}: {e}", path.display()))
}

fn summarize(result: &SimulationResult) {
    report(&result.diagnostics);
    println!("{} steps, end time {:.9}", result.iterations, result.end_time);
    for t in &result.transfers {
        let outcome = match &t.outcome {
            swapsim::transfer::Outcome::Applied => "applied",
            swapsim::transfer::Outcome::Rejected(_) => "rejected",
        };
        println!("transfer {} {outcome} at t={:.9}", t.name, t.time);
    }
    for (target, k) in &result.swaps {
        println!("swap of {target} at iteration {k}");
    }
}

fn load_schedule(path: &Path, options: &RunOptions) -> Result<Vec<(u64, String, String)>, String> {
    let entries: Vec<ScheduleEntry> =
        serde_json::from_str(&read(path)?).map_err(|e| format!("{}: {e}", path.display()))?;
    let base = path.parent().unwrap_or(Path::new("."));
    entries
        .into_iter()
        .map(|e| {
            let spec = base.join(&e.spec);
            let at = ((e.time - options.start) / options.step_size).round().max(0.0) as u64;
            Ok((at, spec.display().to_string(), read(&spec)?))
        })
        .collect()
}

fn run(args: RunArgs) -> Result<(), String> {
    let cfg = load_config(&args.config)?;
    let registry = registry(args.feed.as_deref())?;
    let mut options = RunOptions::new(args.start, args.end, args.step);
    options.min_steps_before_transfer = args.min_steps;
    options.check_every_n_steps = args.check_every;
    if let Some(p) = &args.faults {
        options.fault_rules = FaultRule::parse_list(&read(p)?).map_err(|e| format!("{}: {e}", p.display()))?;
    }
    let schedule = match &args.schedule {
        Some(p) => load_schedule(p, &options)?,
        None => Vec::new(),
    };
    let later: Vec<MultiModelConfig> = schedule
        .iter()
        .filter_map(|(_, _, text)| parse_multi_model_with_warnings(text).ok().map(|(c, _)| c))
        .collect();
    let columns = union_columns(std::iter::once(&cfg).chain(&later), &registry, &options.fault_rules);

    let mut sim = Simulation::new(cfg, registry, options).map_err(|e| e.to_string())?;
    report(sim.diagnostics());
    let mut scripted = ScriptedTransfers::new(schedule);
    let mut watched = args.transfer_dir.as_ref().map(DirectoryTransferSource::new);
    let live = watched.is_some();
    let source: Option<&mut dyn TransferSource> = match (&mut watched, args.schedule.is_some()) {
        (Some(dir), _) => Some(dir),
        (None, true) => Some(&mut scripted),
        (None, false) => None,
    };
    let result = if live {
        let mut out = SegmentedCsv::new(&args.out);
        let r = sim.run(source, &mut out);
        out.finish().map_err(|e| e.to_string())?;
        r
    } else {
        let mut out = CsvLog::new(create(&args.out)?, &columns).map_err(|e| e.to_string())?;
        let r = sim.run(source, &mut out);
        out.flush().map_err(|e| e.to_string())?;
        r
    };
    summarize(&result.map_err(|e| e.to_string())?);
    Ok(())
}

fn validate(config: &Path, spec: Option<&Path>, feed: Option<&Path>) -> Result<(), String> {
    let cfg = load_config(config)?;
    let registry = registry(feed)?;
    let validation = validate_config(&cfg, &registry);
    report(&validation.diagnostics);
    if !validation.is_runnable() {
        return Err(format!("{} is invalid", config.display()));
    }
    let Some(spec) = spec else {
        println!("{}: ok", config.display());
        return Ok(());
    };
    let sim = Simulation::new(cfg, registry, RunOptions::new(0.0, 0.0, 1.0)).map_err(|e| e.to_string())?;
    let (new_cfg, warnings) =
        parse_multi_model_with_warnings(&read(spec)?).map_err(|e| format!("{}: {e}", spec.display()))?;
    for w in warnings {
        eprintln!("warning: {w}");
    }
    let candidate = Candidate {
        name: spec.display().to_string(),
        text: String::new(),
    };
    match sim.validate_swap_spec(&candidate, new_cfg) {
        Ok(plan) => {
            report(&plan.diagnostics);
            let transfers: Vec<String> = plan.transfers.iter().map(|(o, n)| format!("{o}->{n}")).collect();
            let fresh: Vec<&str> = plan.fresh.iter().map(String::as_str).collect();
            println!(
                "{}: ok; transfers [{}], fresh [{}]",
                spec.display(),
                transfers.join(", "),
                fresh.join(", ")
            );
            Ok(())
        }
        Err(diags) => {
            report(&diags);
            let errors = diags.iter().filter(|d| d.severity == Severity::Error).count();
            Err(format!("{} rejected with {errors} error(s)", spec.display()))
        }
    }
}

fn scenario(name: ScenarioName, transfer_at: Option<f64>, out: &Path) -> Result<(), String> {
    let scenario = Scenario::with_transfer_at(name, transfer_at);
    let mut w = create(out)?;
    let result = scenario.run_csv(&mut w).map_err(|e| e.to_string())?;
    w.flush().map_err(|e| format!("{}: {e}", out.display()))?;
    summarize(&result);
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Run(args) => run(args),
        Command::Validate { config, spec, feed } => validate(&config, spec.as_deref(), feed.as_deref()),
        Command::Scenario { name, transfer_at, out } => scenario(name, transfer_at, &out),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
