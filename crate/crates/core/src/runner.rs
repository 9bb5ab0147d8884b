//! Experiment orchestration.
//!
//! A run goes through clean, setup, pre-flight, storage snapshot,
//! treatments, load, storage snapshot, revert, collection and persistence,
//! in that order. The measurement window opens at the first dispatched
//! request plus `settle_seconds` and lasts `duration` seconds. `report.yaml`
//! is written last; its presence marks a complete run.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::{actions, Action, Environment};
use crate::loadgen::{LoadProfile, LoadStats, Route};
use crate::metrics::usage::{COMPUTE_GROUP, NETWORK_RECEIVED_GROUP, STORAGE_GROUP};
use crate::metrics::store::{self, MANIFEST_FILE};
use crate::metrics::{collect_responses, is_file_stem, write_store, MetricKind, ResponseQuery};
use crate::simenv::{COMPUTE_METRIC, NETWORK_METRIC, STORAGE_METRIC};
use crate::time::TimeWindow;
use crate::treatments::{
    self, Scalar, TreatmentOutcome, TreatmentRegistry, TreatmentSpec, SCRAPE_INTERVAL, SERVICE_MESH,
    TRACE_SAMPLING,
};

pub const ENGINE_VERSION: &str = env!("CARGO_PKG_VERSION");
pub const REPORT_FILE: &str = "report.yaml";
pub const FAILURE_FILE: &str = "failure.yaml";
pub const SUITE_FILE: &str = "suite.yaml";
pub const FAILED_DIR: &str = "failed";
pub const RAW_DIR: &str = "raw";
pub const SNAPSHOT_DIR: &str = "storage_snapshots";
pub const OUTPUT_ENV: &str = "GOXN_OUTPUT_DIR";
pub const DEFAULT_OUTPUT_ROOT: &str = "goxn-output";
pub const SIM_PREFIX: &str = "sim:";

#[derive(Debug, Error)]
pub enum RunnerError {
    #[error("{path}: {message}")]
    Spec { path: String, message: String },
    #[error("invalid experiment `{name}`: {message}")]
    Invalid { name: String, message: String },
    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Report { path: String, message: String },
}

fn io(context: impl Into<String>) -> impl FnOnce(std::io::Error) -> RunnerError {
    let context = context.into();
    move |source| RunnerError::Io { context, source }
}

/// Default output root: `$GOXN_OUTPUT_DIR` when set, else `goxn-output`.
pub fn default_output_root() -> PathBuf {
    std::env::var_os(OUTPUT_ENV)
        .filter(|v| !v.is_empty())
        .map_or_else(|| PathBuf::from(DEFAULT_OUTPUT_ROOT), PathBuf::from)
}

/// Where the system under evaluation lives.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Sue {
    /// `sim:default` (or `sim:`) is the shipped topology; anything else
    /// after the prefix is a topology file path.
    Sim { topology: Option<PathBuf> },
    External { url: String },
}

impl Sue {
    pub fn parse(s: &str) -> Result<Sue, String> {
        if let Some(rest) = s.strip_prefix(SIM_PREFIX) {
            let topology = match rest {
                "" | "default" => None,
                path => Some(PathBuf::from(path)),
            };
            return Ok(Sue::Sim { topology });
        }
        if s.starts_with("http://") || s.starts_with("https://") {
            return Ok(Sue::External {
                url: s.trim_end_matches('/').to_string(),
            });
        }
        Err(format!("sue `{s}` is neither `sim:<topology>` nor an http(s) URL"))
    }
}

/// The `load` section of a spec file; the run duration comes from `duration`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LoadSpec {
    /// Empty means the system under evaluation itself.
    pub target: String,
    pub routes: Vec<Route>,
    pub rate: f64,
    pub max_in_flight: usize,
    pub seed: u64,
}

impl Default for LoadSpec {
    fn default() -> Self {
        let p = LoadProfile::default();
        LoadSpec {
            target: p.target,
            routes: p.routes,
            rate: p.rate,
            max_in_flight: p.max_in_flight,
            seed: p.seed,
        }
    }
}

fn default_duration() -> f64 {
    60.0
}

pub fn default_responses() -> Vec<ResponseQuery> {
    vec![
        ResponseQuery::new(COMPUTE_GROUP, COMPUTE_METRIC, 5.0, MetricKind::Counter),
        ResponseQuery::new(NETWORK_RECEIVED_GROUP, NETWORK_METRIC, 5.0, MetricKind::Counter),
        ResponseQuery::new(STORAGE_GROUP, STORAGE_METRIC, 5.0, MetricKind::Counter),
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub name: String,
    pub sue: String,
    #[serde(default)]
    pub treatments: Vec<TreatmentSpec>,
    #[serde(default = "default_responses")]
    pub responses: Vec<ResponseQuery>,
    #[serde(default)]
    pub load: LoadSpec,
    /// Seconds of measurement.
    #[serde(default = "default_duration")]
    pub duration: f64,
    /// Output root; the run goes to `<output_dir>/<name>`.
    #[serde(default = "default_output_root")]
    pub output_dir: PathBuf,
    /// Seconds of load before the window opens.
    #[serde(default)]
    pub settle_seconds: f64,
}

impl ExperimentSpec {
    pub fn new(name: &str, sue: &str) -> Self {
        ExperimentSpec {
            name: name.to_string(),
            sue: sue.to_string(),
            treatments: Vec::new(),
            responses: default_responses(),
            load: LoadSpec::default(),
            duration: default_duration(),
            output_dir: default_output_root(),
            settle_seconds: 0.0,
        }
    }

    pub fn run_dir(&self) -> PathBuf {
        self.output_dir.join(&self.name)
    }

    pub fn failed_dir(&self) -> PathBuf {
        self.output_dir.join(FAILED_DIR).join(&self.name)
    }

    pub fn sue(&self) -> Result<Sue, RunnerError> {
        Sue::parse(&self.sue).map_err(|message| self.invalid(message))
    }

    fn invalid(&self, message: String) -> RunnerError {
        RunnerError::Invalid {
            name: self.name.clone(),
            message,
        }
    }

    /// Load profile covering settle time plus the measurement window.
    pub fn load_profile(&self) -> LoadProfile {
        let target = match (&self.load.target, Sue::parse(&self.sue)) {
            (t, _) if !t.is_empty() => t.clone(),
            (_, Ok(Sue::External { url })) => url,
            _ => String::new(),
        };
        LoadProfile {
            target,
            routes: self.load.routes.clone(),
            rate: self.load.rate,
            duration: self.settle_seconds + self.duration,
            max_in_flight: self.load.max_in_flight,
            seed: self.load.seed,
        }
    }

    pub fn validate(&self, registry: &TreatmentRegistry) -> Result<(), RunnerError> {
        if !is_file_stem(&self.name) || self.name == FAILED_DIR {
            return Err(self.invalid(format!("name `{}` is not filesystem-safe", self.name)));
        }
        self.sue()?;
        if !(self.duration.is_finite() && self.duration > 0.0) {
            return Err(self.invalid(format!("duration must be positive, got {}", self.duration)));
        }
        if !(self.settle_seconds.is_finite() && self.settle_seconds >= 0.0) {
            return Err(self.invalid(format!("settle_seconds must be nonnegative, got {}", self.settle_seconds)));
        }
        if self.responses.is_empty() {
            return Err(self.invalid("no responses configured".into()));
        }
        let mut names = std::collections::BTreeSet::new();
        for q in &self.responses {
            q.validate().map_err(|e| self.invalid(e.to_string()))?;
            if !names.insert(q.name.as_str()) {
                return Err(self.invalid(format!("duplicate response `{}`", q.name)));
            }
            if self.duration < 2.0 * q.step_seconds {
                return Err(self.invalid(format!(
                    "duration {} s is shorter than two steps of `{}` ({} s)",
                    self.duration, q.name, q.step_seconds
                )));
            }
        }
        self.load_profile().validate().map_err(|e| self.invalid(e.to_string()))?;
        for t in &self.treatments {
            registry.build(t).map_err(|e| self.invalid(e.to_string()))?;
        }
        Ok(())
    }
}

/// Reads and validates a spec file against the built-in treatments.
pub fn load_spec(path: &Path) -> Result<ExperimentSpec, RunnerError> {
    load_spec_with(path, &TreatmentRegistry::with_builtins())
}

pub fn load_spec_with(path: &Path, registry: &TreatmentRegistry) -> Result<ExperimentSpec, RunnerError> {
    let spec_err = |message: String| RunnerError::Spec {
        path: path.display().to_string(),
        message,
    };
    let text = fs::read_to_string(path).map_err(|e| spec_err(e.to_string()))?;
    let spec: ExperimentSpec = serde_yaml::from_str(&text).map_err(|e| spec_err(e.to_string()))?;
    spec.validate(registry).map_err(|e| spec_err(e.to_string()))?;
    Ok(spec)
}

pub const CATALOG_KEYS: [&str; 7] = [
    "baseline",
    "monitoring-medium",
    "monitoring-high",
    "tracing-low",
    "tracing-medium",
    "tracing-high",
    "service-mesh",
];

/// Treatments of a catalog scenario; the baseline has none.
pub fn catalog_treatments(key: &str) -> Option<Vec<TreatmentSpec>> {
    let scrape = |s: i64| {
        TreatmentSpec::new(SCRAPE_INTERVAL)
            .param("seconds", Scalar::Int(s))
            .target("prometheus")
    };
    let sampling = |p: i64| {
        TreatmentSpec::new(TRACE_SAMPLING)
            .param("percent", Scalar::Int(p))
            .target("otel-collector")
    };
    Some(match key {
        "baseline" => vec![],
        "monitoring-medium" => vec![scrape(30)],
        "monitoring-high" => vec![scrape(5)],
        "tracing-low" => vec![sampling(5)],
        "tracing-medium" => vec![sampling(10)],
        "tracing-high" => vec![sampling(50)],
        "service-mesh" => vec![TreatmentSpec::new(SERVICE_MESH)
            .param("enabled", Scalar::Bool(true))
            .target("mesh")],
        _ => return None,
    })
}

/// A catalog scenario against the shipped simulated topology.
pub fn catalog_spec(key: &str, output_dir: &Path) -> Option<ExperimentSpec> {
    let treatments = catalog_treatments(key)?;
    Some(ExperimentSpec {
        treatments,
        output_dir: output_dir.to_path_buf(),
        ..ExperimentSpec::new(key, "sim:default")
    })
}

pub fn catalog(output_dir: &Path) -> Vec<ExperimentSpec> {
    CATALOG_KEYS
        .iter()
        .map(|k| catalog_spec(k, output_dir).expect("catalog key"))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentReport {
    pub name: String,
    pub scenario_key: String,
    pub sue: String,
    pub window: TimeWindow,
    pub treatments: Vec<TreatmentOutcome>,
    pub load_stats: LoadStats,
    /// Relative to the run directory.
    pub raw_store_path: String,
    /// Relative to the run directory.
    pub storage_snapshot_paths: Vec<String>,
    #[serde(default)]
    pub failed_queries: Vec<String>,
    pub engine_version: String,
}

impl ExperimentReport {
    /// Checks window discipline against the treatment timestamps.
    pub fn check_window(&self) -> Result<(), String> {
        for t in &self.treatments {
            if let Some(v) = t.verified_at {
                if self.window.start() < v {
                    return Err(format!("window opens before `{}` was verified", t.key));
                }
            }
            if let Some(r) = t.reverted_at {
                if self.window.end() > r {
                    return Err(format!("window closes after `{}` was reverted", t.key));
                }
            }
        }
        Ok(())
    }

    fn check_artifacts(&self, dir: &Path) -> Result<(), String> {
        let manifest = dir.join(&self.raw_store_path).join(MANIFEST_FILE);
        if !manifest.is_file() {
            return Err(format!("missing raw store manifest {}", manifest.display()));
        }
        for p in &self.storage_snapshot_paths {
            if !dir.join(p).is_file() {
                return Err(format!("missing storage snapshot {}", dir.join(p).display()));
            }
        }
        Ok(())
    }
}

/// Writes `dir/report.yaml` after checking every referenced artifact exists.
pub fn persist_report(report: &ExperimentReport, dir: &Path) -> Result<PathBuf, RunnerError> {
    let path = dir.join(REPORT_FILE);
    let report_err = |message: String| RunnerError::Report {
        path: path.display().to_string(),
        message,
    };
    report.check_window().map_err(report_err)?;
    report.check_artifacts(dir).map_err(report_err)?;
    let text = serde_yaml::to_string(report).map_err(|e| report_err(e.to_string()))?;
    let tmp = dir.join(".report.yaml.tmp");
    fs::write(&tmp, text).map_err(io(format!("writing {}", tmp.display())))?;
    fs::rename(&tmp, &path).map_err(io(format!("writing {}", path.display())))?;
    Ok(path)
}

/// Reads `dir/report.yaml` strictly and checks the artifacts it references.
pub fn read_report(dir: &Path) -> Result<ExperimentReport, RunnerError> {
    let path = dir.join(REPORT_FILE);
    let report_err = |message: String| RunnerError::Report {
        path: path.display().to_string(),
        message,
    };
    let text = fs::read_to_string(&path).map_err(|e| report_err(e.to_string()))?;
    let report: ExperimentReport = serde_yaml::from_str(&text).map_err(|e| report_err(e.to_string()))?;
    report.check_artifacts(dir).map_err(report_err)?;
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Validate,
    Clean,
    Setup,
    Preflight,
    Snapshot,
    Treatments,
    Load,
    Collect,
    Persist,
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = serde_yaml::to_string(self).unwrap_or_default();
        f.write_str(s.trim())
    }
}

/// Written to `failed/<name>/failure.yaml`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunFailure {
    pub name: String,
    pub phase: Phase,
    pub error: String,
    #[serde(default)]
    pub window: Option<TimeWindow>,
    #[serde(default)]
    pub treatments: Vec<TreatmentOutcome>,
    /// Where partial outputs were kept.
    pub failure_dir: PathBuf,
}

impl fmt::Display for RunFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "`{}` failed during {}: {}", self.name, self.phase, self.error)
    }
}

impl std::error::Error for RunFailure {}

struct Progress {
    applied: Vec<TreatmentOutcome>,
    window: Option<TimeWindow>,
}

type PhaseResult<T> = Result<T, (Phase, String)>;

fn at<E: fmt::Display>(phase: Phase) -> impl FnOnce(E) -> (Phase, String) {
    move |e| (phase, e.to_string())
}

fn remove_dir_if_present(dir: &Path) -> std::io::Result<()> {
    match fs::remove_dir_all(dir) {
        Err(e) if e.kind() != std::io::ErrorKind::NotFound => Err(e),
        _ => Ok(()),
    }
}

/// Runs one experiment. Any earlier output of the same name is replaced.
/// On failure, applied treatments are reverted, the environment is cleaned,
/// and partial outputs move to `failed/<name>` next to `failure.yaml`.
#[allow(clippy::result_large_err)]
pub fn run_experiment(
    spec: &ExperimentSpec,
    env: &mut dyn Environment,
    registry: &TreatmentRegistry,
) -> Result<ExperimentReport, RunFailure> {
    let run_dir = spec.run_dir();
    let failed_dir = spec.failed_dir();
    let mut progress = Progress {
        applied: Vec::new(),
        window: None,
    };
    let result = remove_dir_if_present(&run_dir)
        .and_then(|_| remove_dir_if_present(&failed_dir))
        .map_err(at(Phase::Validate))
        .and_then(|_| phases(spec, env, registry, &run_dir, &mut progress));
    let (phase, error) = match result {
        Ok(report) => return Ok(report),
        Err(e) => e,
    };
    log::error!("`{}` failed during {phase}: {error}", spec.name);
    for o in progress.applied.iter_mut().rev() {
        if o.reverted_at.is_none() && o.applied_at.is_some() {
            match treatments::revert(o, env) {
                Ok(r) => *o = r,
                Err(e) => log::warn!("{e}"),
            }
        }
    }
    if let Err(e) = env.execute(&Action::new(actions::CLEAN)) {
        log::warn!("cleanup after failure: {e}");
    }
    let failure = RunFailure {
        name: spec.name.clone(),
        phase,
        error,
        window: progress.window,
        treatments: progress.applied,
        failure_dir: failed_dir.clone(),
    };
    if let Err(e) = keep_partial_outputs(&run_dir, &failed_dir, &failure) {
        log::error!("recording failure of `{}`: {e}", spec.name);
    }
    Err(failure)
}

fn keep_partial_outputs(run_dir: &Path, failed_dir: &Path, failure: &RunFailure) -> Result<(), RunnerError> {
    if let Some(parent) = failed_dir.parent() {
        fs::create_dir_all(parent).map_err(io(format!("creating {}", parent.display())))?;
    }
    if run_dir.exists() {
        fs::rename(run_dir, failed_dir).map_err(io(format!("moving {}", run_dir.display())))?;
    } else {
        fs::create_dir_all(failed_dir).map_err(io(format!("creating {}", failed_dir.display())))?;
    }
    let text = serde_yaml::to_string(failure).map_err(|e| RunnerError::Report {
        path: failed_dir.display().to_string(),
        message: e.to_string(),
    })?;
    let path = failed_dir.join(FAILURE_FILE);
    fs::write(&path, text).map_err(io(format!("writing {}", path.display())))
}

fn phases(
    spec: &ExperimentSpec,
    env: &mut dyn Environment,
    registry: &TreatmentRegistry,
    run_dir: &Path,
    progress: &mut Progress,
) -> PhaseResult<ExperimentReport> {
    spec.validate(registry).map_err(at(Phase::Validate))?;

    env.execute(&Action::new(actions::CLEAN)).map_err(at(Phase::Clean))?;
    env.execute(&Action::new(actions::SETUP)).map_err(at(Phase::Setup))?;
    env.preflight(&spec.responses).map_err(at(Phase::Preflight))?;
    let before = env.storage_snapshot().map_err(at(Phase::Snapshot))?;

    for t in &spec.treatments {
        let outcome = treatments::apply(registry, t, env).map_err(at(Phase::Treatments))?;
        let verified = outcome.verified;
        let detail = outcome.detail.clone();
        progress.applied.push(outcome);
        if !verified {
            return Err((Phase::Treatments, format!("`{}` did not verify: {detail}", t.key)));
        }
    }

    let profile = spec.load_profile();
    let load_stats = env.generate_load(&profile).map_err(at(Phase::Load))?;
    let first = load_stats
        .first_dispatch
        .ok_or((Phase::Load, "no request was dispatched".to_string()))?;
    let start = first.add_millis((spec.settle_seconds * 1000.0).round() as i64);
    let end = start.add_millis((spec.duration * 1000.0).round() as i64);
    let window = TimeWindow::new(start, end).map_err(at(Phase::Load))?;
    progress.window = Some(window);
    env.wait_until(end);
    let after = env.storage_snapshot().map_err(at(Phase::Snapshot))?;

    for o in progress.applied.iter_mut().rev() {
        match treatments::revert(o, env) {
            Ok(r) => *o = r,
            Err(e) => log::warn!("{e}"),
        }
    }

    let store = collect_responses(env.metric_source(), &spec.responses, &window).map_err(at(Phase::Collect))?;
    let failed_queries: Vec<String> = store.failed_queries().into_iter().map(str::to_string).collect();
    if failed_queries.len() == spec.responses.len() {
        return Err((Phase::Collect, format!("every query failed: {}", failed_queries.join(", "))));
    }

    fs::create_dir_all(run_dir).map_err(at(Phase::Persist))?;
    write_store(&store, &run_dir.join(RAW_DIR)).map_err(at(Phase::Persist))?;
    let snap_dir = run_dir.join(SNAPSHOT_DIR);
    let mut storage_snapshot_paths = Vec::new();
    for snap in [&before, &after] {
        store::write_storage_snapshot(snap, &snap_dir).map_err(at(Phase::Persist))?;
        storage_snapshot_paths.push(format!("{SNAPSHOT_DIR}/{}", store::snapshot_file_name(snap.taken_at)));
    }
    storage_snapshot_paths.dedup();
    let report = ExperimentReport {
        name: spec.name.clone(),
        scenario_key: spec.name.clone(),
        sue: spec.sue.clone(),
        window,
        treatments: progress.applied.clone(),
        load_stats,
        raw_store_path: RAW_DIR.into(),
        storage_snapshot_paths,
        failed_queries,
        engine_version: ENGINE_VERSION.into(),
    };
    persist_report(&report, run_dir).map_err(at(Phase::Persist))?;
    log::info!("`{}` complete: window {window}", spec.name);
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Ok,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SuiteEntry {
    pub scenario: String,
    pub status: RunStatus,
    /// Relative to the suite root.
    pub output: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SuiteManifest {
    pub engine_version: String,
    pub entries: Vec<SuiteEntry>,
}

impl SuiteManifest {
    pub fn all_ok(&self) -> bool {
        self.entries.iter().all(|e| e.status == RunStatus::Ok)
    }
}

fn relative(root: &Path, path: &Path) -> String {
    path.strip_prefix(root).unwrap_or(path).display().to_string()
}

/// Runs specs one after another; a failed run is recorded and the next one
/// still runs. Writes `suite.yaml` under `root`.
pub fn run_suite(
    specs: &[ExperimentSpec],
    env: &mut dyn Environment,
    registry: &TreatmentRegistry,
    root: &Path,
) -> Result<(Vec<ExperimentReport>, SuiteManifest), RunnerError> {
    if specs.is_empty() {
        return Err(RunnerError::Invalid {
            name: "suite".into(),
            message: "no scenarios".into(),
        });
    }
    let mut reports = Vec::new();
    let mut entries = Vec::new();
    for spec in specs {
        log::info!("running `{}`", spec.name);
        match run_experiment(spec, env, registry) {
            Ok(report) => {
                entries.push(SuiteEntry {
                    scenario: spec.name.clone(),
                    status: RunStatus::Ok,
                    output: relative(root, &spec.run_dir()),
                    error: None,
                });
                reports.push(report);
            }
            Err(failure) => entries.push(SuiteEntry {
                scenario: spec.name.clone(),
                status: RunStatus::Failed,
                output: relative(root, &failure.failure_dir),
                error: Some(failure.to_string()),
            }),
        }
    }
    let manifest = SuiteManifest {
        engine_version: ENGINE_VERSION.into(),
        entries,
    };
    fs::create_dir_all(root).map_err(io(format!("creating {}", root.display())))?;
    let path = root.join(SUITE_FILE);
    let text = serde_yaml::to_string(&manifest).map_err(|e| RunnerError::Report {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    fs::write(&path, text).map_err(io(format!("writing {}", path.display())))?;
    Ok((reports, manifest))
}

/// Reads `suite.yaml` from `root`.
pub fn read_suite(root: &Path) -> Result<SuiteManifest, RunnerError> {
    let path = root.join(SUITE_FILE);
    let text = fs::read_to_string(&path).map_err(io(format!("reading {}", path.display())))?;
    serde_yaml::from_str(&text).map_err(|e| RunnerError::Report {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

impl From<RunFailure> for RunnerError {
    fn from(f: RunFailure) -> Self {
        RunnerError::Invalid {
            name: f.name.clone(),
            message: f.to_string(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sue_forms() {
        assert_eq!(Sue::parse("sim:default").unwrap(), Sue::Sim { topology: None });
        assert_eq!(
            Sue::parse("sim:topo.yaml").unwrap(),
            Sue::Sim {
                topology: Some("topo.yaml".into())
            }
        );
        assert_eq!(
            Sue::parse("http://h:9/").unwrap(),
            Sue::External {
                url: "http://h:9".into()
            }
        );
        assert!(Sue::parse("k8s://x").is_err());
    }

    #[test]
    fn minimal_spec_gets_defaults() {
        let spec: ExperimentSpec =
            serde_yaml::from_str("name: demo\nsue: sim:default\noutput_dir: out\n").unwrap();
        assert_eq!(spec.duration, 60.0);
        assert_eq!(spec.responses, default_responses());
        assert_eq!(spec.load, LoadSpec::default());
        assert!(spec.treatments.is_empty());
        spec.validate(&TreatmentRegistry::with_builtins()).unwrap();
        assert_eq!(spec.load_profile().duration, 60.0);
    }

    #[test]
    fn typo_key_is_rejected() {
        let err = serde_yaml::from_str::<ExperimentSpec>("name: x\nsue: sim:default\ntratments: []\n").unwrap_err();
        assert!(err.to_string().contains("tratments"), "{err}");
    }

    #[test]
    fn spec_validation() {
        let r = TreatmentRegistry::with_builtins();
        let ok = ExperimentSpec::new("a", "sim:default");
        ok.validate(&r).unwrap();
        for bad in [
            ExperimentSpec {
                name: "a/b".into(),
                ..ok.clone()
            },
            ExperimentSpec {
                name: FAILED_DIR.into(),
                ..ok.clone()
            },
            ExperimentSpec {
                duration: 9.0,
                ..ok.clone()
            },
            ExperimentSpec {
                settle_seconds: -1.0,
                ..ok.clone()
            },
            ExperimentSpec {
                treatments: vec![TreatmentSpec::new("nope")],
                ..ok.clone()
            },
            ExperimentSpec {
                sue: "ftp://x".into(),
                ..ok.clone()
            },
        ] {
            assert!(bad.validate(&r).is_err(), "{bad:?}");
        }
    }

    #[test]
    fn catalog_matches_scenarios() {
        let specs = catalog(Path::new("out"));
        assert_eq!(specs.len(), 7);
        let high = &specs[5];
        assert_eq!(high.name, "tracing-high");
        assert_eq!(high.treatments[0].key, TRACE_SAMPLING);
        assert_eq!(high.treatments[0].params["percent"], Scalar::Int(50));
        assert!(specs[0].treatments.is_empty());
        assert!(catalog_spec("nope", Path::new("out")).is_none());
    }

    #[test]
    fn phase_names() {
        assert_eq!(Phase::Preflight.to_string(), "preflight");
    }

    use crate::simenv::SimEnvironment;
    use crate::treatments::{settings, Treatment};
    use std::collections::BTreeMap;
    use std::sync::Arc;

    fn short(name: &str, dir: &Path) -> ExperimentSpec {
        ExperimentSpec {
            duration: 20.0,
            output_dir: dir.to_path_buf(),
            ..ExperimentSpec::new(name, "sim:default")
        }
    }

    #[test]
    fn baseline_run_persists_complete_report() {
        let dir = tempfile::tempdir().unwrap();
        let mut env = SimEnvironment::shipped(1);
        let spec = short("baseline", dir.path());
        let report = run_experiment(&spec, &mut env, &TreatmentRegistry::with_builtins()).unwrap();
        assert_eq!(report.window.len_millis(), 20_000);
        assert_eq!(report.load_stats.sent, 200);
        assert!(report.failed_queries.is_empty());
        assert_eq!(report.storage_snapshot_paths.len(), 2);
        assert_eq!(read_report(&spec.run_dir()).unwrap(), report);
        assert!(spec.run_dir().join(RAW_DIR).join(MANIFEST_FILE).is_file());
    }

    #[test]
    fn treatments_bracket_the_window() {
        let dir = tempfile::tempdir().unwrap();
        let mut env = SimEnvironment::shipped(1);
        let mut spec = short("tracing-high", dir.path());
        spec.treatments = catalog_treatments("tracing-high").unwrap();
        spec.settle_seconds = 5.0;
        let report = run_experiment(&spec, &mut env, &TreatmentRegistry::with_builtins()).unwrap();
        let t = &report.treatments[0];
        assert!(t.verified);
        assert!(t.verified_at.unwrap() <= report.window.start());
        assert!(t.reverted_at.unwrap() >= report.window.end());
        assert_eq!(report.window.start().millis(), 5_000);
        let now = env.sim().settings().trace_sampling_fraction;
        assert_eq!(now, 0.01);
    }

    #[derive(Debug)]
    struct Liar;

    impl Treatment for Liar {
        fn key(&self) -> &str {
            "liar"
        }
        fn touches(&self) -> Vec<String> {
            vec![settings::TRACE_SAMPLING_PERCENT.into()]
        }
        fn apply_actions(&self) -> Vec<Action> {
            vec![Action::new(TRACE_SAMPLING).param("percent", 10)]
        }
        fn expected(&self) -> Vec<(String, String)> {
            vec![(settings::TRACE_SAMPLING_PERCENT.into(), "20".into())]
        }
        fn restore_actions(&self, _previous: &BTreeMap<String, String>) -> Vec<Action> {
            vec![Action::new(TRACE_SAMPLING).param("percent", 1)]
        }
    }

    #[test]
    fn unverified_treatment_fails_run_and_restores() {
        let dir = tempfile::tempdir().unwrap();
        let mut registry = TreatmentRegistry::with_builtins();
        registry
            .register("liar", Arc::new(|_: &TreatmentSpec| Ok(Box::new(Liar) as Box<dyn Treatment>)))
            .unwrap();
        let mut env = SimEnvironment::shipped(1);
        let mut spec = short("liar", dir.path());
        spec.treatments = vec![TreatmentSpec::new("liar")];
        let failure = run_experiment(&spec, &mut env, &registry).unwrap_err();
        assert_eq!(failure.phase, Phase::Treatments);
        assert!(!spec.run_dir().exists());
        let text = fs::read_to_string(spec.failed_dir().join(FAILURE_FILE)).unwrap();
        let back: RunFailure = serde_yaml::from_str(&text).unwrap();
        assert_eq!(back, failure);
        assert_eq!(env.sim().settings().trace_sampling_fraction, 0.01);
        assert!(failure.treatments[0].reverted_at.is_some());
    }

    #[test]
    fn suite_continues_past_failures() {
        let dir = tempfile::tempdir().unwrap();
        let mut env = SimEnvironment::shipped(1);
        let mut bad = short("bad", dir.path());
        bad.duration = 5.0;
        let specs = [bad, short("good", dir.path())];
        let (reports, manifest) =
            run_suite(&specs, &mut env, &TreatmentRegistry::with_builtins(), dir.path()).unwrap();
        assert_eq!(reports.len(), 1);
        assert_eq!(manifest.entries[0].status, RunStatus::Failed);
        assert_eq!(manifest.entries[0].output, "failed/bad");
        assert_eq!(manifest.entries[1].status, RunStatus::Ok);
        assert_eq!(manifest.entries[1].output, "good");
        assert_eq!(read_suite(dir.path()).unwrap(), manifest);
    }

    #[test]
    fn rerun_replaces_previous_output() {
        let dir = tempfile::tempdir().unwrap();
        let mut env = SimEnvironment::shipped(1);
        let spec = short("again", dir.path());
        let stale = spec.run_dir().join("stale.txt");
        fs::create_dir_all(spec.run_dir()).unwrap();
        fs::write(&stale, "x").unwrap();
        run_experiment(&spec, &mut env, &TreatmentRegistry::with_builtins()).unwrap();
        assert!(!stale.exists());
    }
}
