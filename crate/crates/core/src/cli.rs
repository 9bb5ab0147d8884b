//! Command-line entry point.
//!
//! Exit status is 0 when every requested run and processing step succeeds,
//! 1 when any of them fails, and 2 on a usage error.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::analysis::{
    compare, emit_plot_data, load_factors, load_service_map, process_run, write_comparison,
    COMPARISON_FILE, PLOT_DATA_FILE,
};
use crate::env::{CommandExecutor, Environment, ExternalEnvironment};
use crate::metrics::PromClient;
use crate::runner::{
    catalog, default_output_root, load_spec, run_experiment, run_suite, ExperimentSpec, RunStatus, Sue,
};
use crate::simenv::{serve_http, ServeClock, SimEnvironment, SimSettings, TopologySpec};
use crate::treatments::TreatmentRegistry;

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "goxn", version, about = "Service-level energy experiments on microservice deployments")]
pub struct Cli {
    /// More log output; repeat for debug.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one experiment spec.
    Run(RunArgs),
    /// Run a directory of specs, or `catalog` for the seven built-in scenarios,
    /// then process every completed run and compare them.
    Suite(SuiteArgs),
    /// Emit the CSV families of a completed run directory.
    Process(ProcessArgs),
    /// Compare processed run directories against a baseline scenario.
    Compare(CompareArgs),
    /// Simulator utilities.
    #[command(subcommand)]
    Sim(SimCommand),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum EnvChoice {
    Sim,
    External,
}

#[derive(Debug, Args)]
pub struct EnvArgs {
    /// Environment driving the run; defaults to `sim` for `sim:` targets.
    #[arg(long, value_enum)]
    pub env: Option<EnvChoice>,
    /// Seed of the simulated request stream.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Prometheus base URL (external environment).
    #[arg(long)]
    pub prometheus: Option<String>,
    /// Shell command receiving one action line on stdin; `{action}` in the
    /// command expands to the action name (external environment).
    #[arg(long)]
    pub executor: Option<String>,
    /// Output root; overrides `output_dir` and GOXN_OUTPUT_DIR.
    #[arg(long, short)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AnalysisArgs {
    /// Energy intensity factors file (kWh/GB).
    #[arg(long)]
    pub factors: Option<PathBuf>,
    /// Service map file.
    #[arg(long)]
    pub service_map: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    pub spec: PathBuf,
    #[command(flatten)]
    pub env: EnvArgs,
}

#[derive(Debug, Args)]
pub struct SuiteArgs {
    /// Directory of spec files, or `catalog`.
    pub source: String,
    #[command(flatten)]
    pub env: EnvArgs,
    #[command(flatten)]
    pub analysis: AnalysisArgs,
    /// Scenario compared against.
    #[arg(long, default_value = "baseline")]
    pub baseline: String,
}

#[derive(Debug, Args)]
pub struct ProcessArgs {
    pub run_dir: PathBuf,
    #[command(flatten)]
    pub analysis: AnalysisArgs,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    #[arg(required = true)]
    pub dirs: Vec<PathBuf>,
    #[arg(long)]
    pub baseline: String,
    /// Where comparison.csv and plot_data.csv go.
    #[arg(long, short)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum SimCommand {
    /// Serve the simulator over HTTP until interrupted.
    Serve(ServeArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ClockChoice {
    Wall,
    Manual,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    /// Topology file; the shipped topology when omitted.
    #[arg(long)]
    pub topology: Option<PathBuf>,
    #[arg(long, default_value = "127.0.0.1:9464")]
    pub bind: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = ClockChoice::Wall)]
    pub clock: ClockChoice,
}

/// Parses `args` (program name first) and runs the command.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    let _ = env_logger::Builder::new().filter_level(level).format_timestamp(None).try_init();
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            match e.downcast_ref::<UsageError>() {
                Some(_) => EXIT_USAGE,
                None => EXIT_FAILURE,
            }
        }
    }
}

#[derive(Debug, thiserror::Error)]
#[error("{0}")]
struct UsageError(String);

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

fn dispatch(command: Command) -> Result<i32> {
    match command {
        Command::Run(a) => cmd_run(a),
        Command::Suite(a) => cmd_suite(a),
        Command::Process(a) => cmd_process(a),
        Command::Compare(a) => cmd_compare(a),
        Command::Sim(SimCommand::Serve(a)) => cmd_serve(a),
    }
}

fn load_spec_or_usage(path: &Path) -> Result<ExperimentSpec> {
    if !path.is_file() {
        return Err(usage(format!("spec file {} not found", path.display())));
    }
    load_spec(path).map_err(|e| usage(e.to_string()))
}

fn sim_topology(sue: &Sue, base: &Path) -> Result<TopologySpec> {
    match sue {
        Sue::Sim { topology: None } => Ok(TopologySpec::shipped_default()),
        Sue::Sim { topology: Some(p) } => {
            let path = if p.is_absolute() { p.clone() } else { base.join(p) };
            TopologySpec::from_file(&path).map_err(|e| usage(e.to_string()))
        }
        Sue::External { url } => Err(usage(format!("`{url}` is not a simulated target; use --env external"))),
    }
}

fn build_env(args: &EnvArgs, sue: &Sue, base: &Path) -> Result<Box<dyn Environment>> {
    let choice = args.env.unwrap_or(match sue {
        Sue::Sim { .. } => EnvChoice::Sim,
        Sue::External { .. } => EnvChoice::External,
    });
    match choice {
        EnvChoice::Sim => {
            let topology = sim_topology(sue, base)?;
            let settings = SimSettings {
                seed: args.seed,
                ..topology.settings.clone()
            };
            Ok(Box::new(SimEnvironment::new(topology, settings).map_err(|e| usage(e.to_string()))?))
        }
        EnvChoice::External => {
            if matches!(sue, Sue::Sim { .. }) {
                return Err(usage("a `sim:` target needs --env sim"));
            }
            let prometheus = args
                .prometheus
                .as_deref()
                .ok_or_else(|| usage("--env external needs --prometheus <url>"))?;
            let executor = args.executor.as_deref().map(CommandExecutor::new);
            Ok(Box::new(ExternalEnvironment::new(executor, PromClient::new(prometheus))))
        }
    }
}

fn parent_dir(path: &Path) -> PathBuf {
    path.parent().map(Path::to_path_buf).unwrap_or_default()
}

fn cmd_run(a: RunArgs) -> Result<i32> {
    let mut spec = load_spec_or_usage(&a.spec)?;
    if let Some(o) = &a.env.output {
        spec.output_dir = o.clone();
    }
    let mut env = build_env(&a.env, &spec.sue()?, &parent_dir(&a.spec))?;
    match run_experiment(&spec, env.as_mut(), &TreatmentRegistry::with_builtins()) {
        Ok(report) => {
            println!("{}: complete, window {}", report.name, report.window);
            println!("{}", spec.run_dir().display());
            Ok(EXIT_OK)
        }
        Err(failure) => {
            eprintln!("error: {failure}");
            eprintln!("partial outputs: {}", failure.failure_dir.display());
            Ok(EXIT_FAILURE)
        }
    }
}

fn suite_specs(a: &SuiteArgs, root: &Path) -> Result<(Vec<ExperimentSpec>, PathBuf)> {
    if a.source == "catalog" {
        return Ok((catalog(root), PathBuf::new()));
    }
    let dir = PathBuf::from(&a.source);
    if !dir.is_dir() {
        return Err(usage(format!("`{}` is neither `catalog` nor a directory of specs", a.source)));
    }
    let mut paths: Vec<PathBuf> = std::fs::read_dir(&dir)
        .with_context(|| format!("reading {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| matches!(p.extension().and_then(|x| x.to_str()), Some("yaml" | "yml")))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(usage(format!("no spec files in {}", dir.display())));
    }
    let mut specs = Vec::with_capacity(paths.len());
    for p in &paths {
        let mut spec = load_spec_or_usage(p)?;
        spec.output_dir = root.to_path_buf();
        specs.push(spec);
    }
    if let Some(other) = specs.iter().find(|s| s.sue != specs[0].sue) {
        return Err(usage(format!(
            "specs in one suite must share a target: `{}` vs `{}`",
            specs[0].sue, other.sue
        )));
    }
    Ok((specs, dir))
}

fn cmd_suite(a: SuiteArgs) -> Result<i32> {
    let root = a.env.output.clone().unwrap_or_else(default_output_root);
    let (specs, base) = suite_specs(&a, &root)?;
    let factors = load_factors(a.analysis.factors.as_deref()).map_err(|e| usage(e.to_string()))?;
    let map = load_service_map(a.analysis.service_map.as_deref()).map_err(|e| usage(e.to_string()))?;
    let mut env = build_env(&a.env, &specs[0].sue()?, &base)?;
    let (_, manifest) = run_suite(&specs, env.as_mut(), &TreatmentRegistry::with_builtins(), &root)?;

    let mut ok = manifest.all_ok();
    let mut processed = Vec::new();
    for entry in &manifest.entries {
        match entry.status {
            RunStatus::Ok => {
                let dir = root.join(&entry.output);
                match process_run(&dir, &factors, &map) {
                    Ok(_) => processed.push(dir),
                    Err(e) => {
                        eprintln!("error: processing {}: {e}", entry.scenario);
                        ok = false;
                    }
                }
            }
            RunStatus::Failed => {
                eprintln!("error: {}", entry.error.as_deref().unwrap_or("run failed"));
            }
        }
        println!("{}: {:?} ({})", entry.scenario, entry.status, entry.output);
    }
    if processed.is_empty() {
        bail!("no scenario completed");
    }
    match compare(&processed, &a.baseline) {
        Ok(table) => {
            write_comparison(&table, &root.join(COMPARISON_FILE))?;
            emit_plot_data(&table, &root.join(PLOT_DATA_FILE))?;
            println!("{}", root.join(COMPARISON_FILE).display());
        }
        Err(e) => {
            eprintln!("error: comparison: {e}");
            ok = false;
        }
    }
    Ok(if ok { EXIT_OK } else { EXIT_FAILURE })
}

fn cmd_process(a: ProcessArgs) -> Result<i32> {
    let factors = load_factors(a.analysis.factors.as_deref()).map_err(|e| usage(e.to_string()))?;
    let map = load_service_map(a.analysis.service_map.as_deref()).map_err(|e| usage(e.to_string()))?;
    let run = process_run(&a.run_dir, &factors, &map)?;
    for f in &run.files {
        println!("{}", f.display());
    }
    Ok(EXIT_OK)
}

fn cmd_compare(a: CompareArgs) -> Result<i32> {
    let out = a.output.unwrap_or_else(default_output_root);
    let table = compare(&a.dirs, &a.baseline)?;
    std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    write_comparison(&table, &out.join(COMPARISON_FILE))?;
    emit_plot_data(&table, &out.join(PLOT_DATA_FILE))?;
    println!("{}", out.join(COMPARISON_FILE).display());
    println!("{}", out.join(PLOT_DATA_FILE).display());
    Ok(EXIT_OK)
}

fn cmd_serve(a: ServeArgs) -> Result<i32> {
    let topology = match &a.topology {
        Some(p) => TopologySpec::from_file(p).map_err(|e| usage(e.to_string()))?,
        None => TopologySpec::shipped_default(),
    };
    let settings = SimSettings {
        seed: a.seed,
        ..topology.settings.clone()
    };
    let env = SimEnvironment::new(topology, settings).map_err(|e| usage(e.to_string()))?;
    let clock = match a.clock {
        ClockChoice::Wall => ServeClock::Wall,
        ClockChoice::Manual => ServeClock::Manual,
    };
    let server = serve_http(env.sim().clone(), &a.bind, clock)?;
    println!("serving on {}", server.url());
    server.join();
    Ok(EXIT_OK)
}
