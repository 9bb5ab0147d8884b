//! Turns completed runs into per-run CSV families and cross-scenario tables.
//!
//! Energy columns are exact decimal joules, so `total_joules` equals the sum
//! of the three component columns digit for digit. Shares and percentages
//! use the shortest decimal that round-trips the `f64`.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use statrs::distribution::{ContinuousCDF, StudentsT};
use thiserror::Error;

use crate::metrics::store::ABSOLUTE_MARKER;
use crate::metrics::usage::{COMPUTE_GROUP, NETWORK_RECEIVED_GROUP, STORAGE_GROUP};
use crate::metrics::{
    container_identity, read_snapshot_store, usages_from_store, MetricsError, ModelInputs, RawStore,
    UsageWarning,
};
use crate::model::{
    aggregate_services, compute_only_underestimation, dominant_component, ContainerUsage,
    EnergyIntensityFactors, FactorsConfig, Joules, ModelError, ServiceEnergyBreakdown, ServiceMap,
};
use crate::runner::{read_report, RunnerError, REPORT_FILE};
use crate::time::TimeWindow;

pub const DEFAULT_FACTORS_YAML: &str = include_str!("../config/factors.yaml");
pub const ENERGY_TOTALS_PREFIX: &str = "energy_totals_";
pub const COMPARISON_FILE: &str = "comparison.csv";
pub const PLOT_DATA_FILE: &str = "plot_data.csv";

/// Groups exported as absolute counter series, with their unit suffix.
pub const ABSOLUTE_GROUPS: [(&str, &str); 3] = [
    (STORAGE_GROUP, "bytes"),
    (NETWORK_RECEIVED_GROUP, "bytes"),
    (COMPUTE_GROUP, "joules"),
];

pub const ENERGY_TOTALS_HEADER: [&str; 10] = [
    "service",
    "compute_joules",
    "network_joules",
    "storage_joules",
    "total_joules",
    "share_compute",
    "share_network",
    "share_storage",
    "compute_only_underestimation_pct",
    "warnings",
];

pub const COMPARISON_HEADER: [&str; 12] = [
    "scenario",
    "service",
    "compute_joules",
    "network_joules",
    "storage_joules",
    "total_joules",
    "share_compute",
    "share_network",
    "share_storage",
    "delta_vs_baseline_pct",
    "dominant",
    "compute_only_underestimation_pct",
];

pub const PLOT_DATA_HEADER: [&str; 5] = ["scenario", "service", "component", "joules", "share"];

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("{0} not found")]
    MissingReport(PathBuf),
    #[error(transparent)]
    Runner(#[from] RunnerError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("{file}:{line}: {reason}")]
    Malformed { file: String, line: u64, reason: String },
    #[error("no {ENERGY_TOTALS_PREFIX}<scenario>.csv in {0}")]
    NoTotals(PathBuf),
    #[error("scenario `{0}` appears more than once")]
    DuplicateScenario(String),
    #[error("baseline `{0}` is not among the inputs")]
    BaselineMissing(String),
    #[error("need at least 2 values, got {0}")]
    TooFewValues(usize),
    #[error("confidence must lie in (0, 1), got {0}")]
    Confidence(f64),
    #[error("nothing to emit")]
    Empty,
    #[error("factors: {0}")]
    Factors(String),
}

fn io(context: impl Into<String>) -> impl FnOnce(std::io::Error) -> AnalysisError {
    let context = context.into();
    move |source| AnalysisError::Io { context, source }
}

/// The shipped factors file.
pub fn default_factors() -> EnergyIntensityFactors {
    parse_factors(DEFAULT_FACTORS_YAML).expect("shipped factors are valid")
}

pub fn parse_factors(text: &str) -> Result<EnergyIntensityFactors, AnalysisError> {
    let config: FactorsConfig =
        serde_yaml::from_str(text).map_err(|e| AnalysisError::Factors(e.to_string()))?;
    Ok(EnergyIntensityFactors::try_from(config)?)
}

/// Reads a factors file; `None` gives the shipped defaults.
pub fn load_factors(path: Option<&Path>) -> Result<EnergyIntensityFactors, AnalysisError> {
    match path {
        None => Ok(default_factors()),
        Some(p) => {
            let text = fs::read_to_string(p).map_err(io(format!("reading {}", p.display())))?;
            parse_factors(&text).map_err(|e| AnalysisError::Factors(format!("{}: {e}", p.display())))
        }
    }
}

/// Reads a service-map file; `None` gives the default label rules.
pub fn load_service_map(path: Option<&Path>) -> Result<ServiceMap, AnalysisError> {
    match path {
        None => Ok(ServiceMap::default()),
        Some(p) => {
            let text = fs::read_to_string(p).map_err(io(format!("reading {}", p.display())))?;
            serde_yaml::from_str(&text).map_err(|e| AnalysisError::Factors(format!("{}: {e}", p.display())))
        }
    }
}

pub fn absolute_file_name(group: &str, unit: &str) -> String {
    format!("{group}{ABSOLUTE_MARKER}{unit}.csv")
}

pub fn energy_totals_file_name(scenario: &str) -> String {
    format!("{ENERGY_TOTALS_PREFIX}{scenario}.csv")
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProcessedRun {
    pub scenario_key: String,
    pub window: TimeWindow,
    pub usages: Vec<ContainerUsage>,
    pub breakdowns: Vec<ServiceEnergyBreakdown>,
    pub warnings: Vec<UsageWarning>,
    /// Files written into the run directory, in emission order.
    pub files: Vec<PathBuf>,
}

/// Reduces `run_dir`'s raw store to usages and service breakdowns and writes
/// the three absolute series files plus `energy_totals_<scenario>.csv` next
/// to the report. A missing input group yields zeros and a warning.
pub fn process_run(
    run_dir: &Path,
    factors: &EnergyIntensityFactors,
    map: &ServiceMap,
) -> Result<ProcessedRun, AnalysisError> {
    let report_path = run_dir.join(REPORT_FILE);
    if !report_path.is_file() {
        return Err(AnalysisError::MissingReport(report_path));
    }
    let report = read_report(run_dir)?;
    let store = read_snapshot_store(&run_dir.join(&report.raw_store_path))?;
    let window = report.window;
    let extracted = usages_from_store(&store, &window, map, &ModelInputs::default())?;
    let breakdowns = aggregate_services(&extracted.usages, factors)?;

    let mut files = Vec::new();
    for (group, unit) in ABSOLUTE_GROUPS {
        let path = run_dir.join(absolute_file_name(group, unit));
        write_absolute_csv(&store, group, &window, map, &path)?;
        files.push(path);
    }
    let totals = run_dir.join(energy_totals_file_name(&report.scenario_key));
    write_energy_totals(&breakdowns, &extracted.usages, &extracted.warnings, &totals)?;
    files.push(totals);
    for w in &extracted.warnings {
        log::warn!("{}: {w}", report.scenario_key);
    }
    Ok(ProcessedRun {
        scenario_key: report.scenario_key,
        window,
        usages: extracted.usages,
        breakdowns,
        warnings: extracted.warnings,
        files,
    })
}

fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>, AnalysisError> {
    let file = fs::File::create(path).map_err(io(format!("creating {}", path.display())))?;
    Ok(csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(file))
}

fn finish(mut w: csv::Writer<fs::File>, path: &Path) -> Result<(), AnalysisError> {
    w.flush().map_err(io(format!("writing {}", path.display())))
}

/// Window samples of one group as `timestamp,container_id,pod,service,value`,
/// sorted by container then time. An absent or failed group gives a header only.
fn write_absolute_csv(
    store: &RawStore,
    group: &str,
    window: &TimeWindow,
    map: &ServiceMap,
    path: &Path,
) -> Result<(), AnalysisError> {
    let mut rows: BTreeMap<(String, i64), [String; 3]> = BTreeMap::new();
    if let Some(g) = store.group(group).filter(|g| g.status.is_ok()) {
        for series in &g.series {
            let Some((id, pod)) = container_identity(&series.labels) else {
                continue;
            };
            let service = map.resolve(&series.labels, &pod);
            for s in series.in_window(window) {
                rows.insert(
                    (id.clone(), s.timestamp.millis()),
                    [pod.clone(), service.clone(), s.value.to_string()],
                );
            }
        }
    }
    let mut w = csv_writer(path)?;
    w.write_record(["timestamp", "container_id", "pod", "service", "value"])?;
    for ((id, ms), [pod, service, value]) in rows {
        let ts = crate::time::Timestamp::from_millis(ms).to_decimal_secs();
        w.write_record([ts.as_str(), &id, &pod, &service, &value])?;
    }
    finish(w, path)
}

fn write_energy_totals(
    breakdowns: &[ServiceEnergyBreakdown],
    usages: &[ContainerUsage],
    warnings: &[UsageWarning],
    path: &Path,
) -> Result<(), AnalysisError> {
    let service_of: BTreeMap<&str, &str> = usages
        .iter()
        .map(|u| (u.container_id.as_str(), u.service.as_str()))
        .collect();
    let mut per_service: BTreeMap<&str, Vec<String>> = BTreeMap::new();
    for w in warnings {
        if let Some(s) = service_of.get(w.container_id.as_str()) {
            per_service.entry(s).or_default().push(w.to_string());
        }
    }
    let mut w = csv_writer(path)?;
    w.write_record(ENERGY_TOTALS_HEADER)?;
    for b in breakdowns {
        let notes = per_service.get(b.service.as_str()).map(|v| v.join("; ")).unwrap_or_default();
        w.write_record([
            b.service.clone(),
            b.compute_joules.to_string(),
            b.network_joules.to_string(),
            b.storage_joules.to_string(),
            b.total_joules.to_string(),
            b.share_compute.to_string(),
            b.share_network.to_string(),
            b.share_storage.to_string(),
            compute_only_underestimation(b).to_string(),
            notes,
        ])?;
    }
    finish(w, path)
}

/// Reads an energy totals file back into breakdowns; shares are recomputed
/// from the joule columns.
pub fn read_energy_totals(path: &Path) -> Result<Vec<ServiceEnergyBreakdown>, AnalysisError> {
    let file = path.display().to_string();
    let malformed = |line: u64, reason: String| AnalysisError::Malformed {
        file: file.clone(),
        line,
        reason,
    };
    let f = fs::File::open(path).map_err(io(format!("opening {}", path.display())))?;
    let mut reader = csv::Reader::from_reader(f);
    let header = reader.headers()?.clone();
    if header.iter().collect::<Vec<_>>() != ENERGY_TOTALS_HEADER {
        return Err(malformed(1, format!("header must be {}", ENERGY_TOTALS_HEADER.join(","))));
    }
    let mut out = Vec::new();
    for record in reader.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        let joules = |i: usize| -> Result<Joules, AnalysisError> {
            record[i].parse().map_err(|e: ModelError| malformed(line, e.to_string()))
        };
        let b = ServiceEnergyBreakdown::new(&record[0], joules(1)?, joules(2)?, joules(3)?);
        if b.total_joules != joules(4)? {
            return Err(malformed(line, "total_joules is not the sum of its components".into()));
        }
        out.push(b);
    }
    Ok(out)
}

/// Scenario key and totals file of a processed run directory.
pub fn find_energy_totals(dir: &Path) -> Result<(String, PathBuf), AnalysisError> {
    let entries = fs::read_dir(dir).map_err(io(format!("reading {}", dir.display())))?;
    let mut found = Vec::new();
    for entry in entries {
        let entry = entry.map_err(io(format!("reading {}", dir.display())))?;
        let name = entry.file_name().to_string_lossy().to_string();
        if let Some(key) = name.strip_prefix(ENERGY_TOTALS_PREFIX).and_then(|s| s.strip_suffix(".csv")) {
            found.push((key.to_string(), entry.path()));
        }
    }
    found.sort();
    found.into_iter().next().ok_or_else(|| AnalysisError::NoTotals(dir.to_path_buf()))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonRow {
    pub scenario: String,
    pub breakdown: ServiceEnergyBreakdown,
    /// Relative change of the service total against the baseline; `None`
    /// when the baseline lacks the service or its total is zero.
    pub delta_vs_baseline_pct: Option<f64>,
    pub dominant: Option<crate::model::Component>,
    pub compute_only_underestimation_pct: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonTable {
    pub baseline: String,
    /// Sorted by scenario, then service.
    pub rows: Vec<ComparisonRow>,
}

impl ComparisonTable {
    pub fn row(&self, scenario: &str, service: &str) -> Option<&ComparisonRow> {
        self.rows
            .iter()
            .find(|r| r.scenario == scenario && r.breakdown.service == service)
    }

    pub fn scenarios(&self) -> BTreeSet<&str> {
        self.rows.iter().map(|r| r.scenario.as_str()).collect()
    }
}

/// Builds the cross-scenario table from in-memory breakdowns.
pub fn compare_breakdowns(
    runs: &[(String, Vec<ServiceEnergyBreakdown>)],
    baseline_key: &str,
) -> Result<ComparisonTable, AnalysisError> {
    let mut by_scenario: BTreeMap<&str, &[ServiceEnergyBreakdown]> = BTreeMap::new();
    for (key, b) in runs {
        if by_scenario.insert(key, b).is_some() {
            return Err(AnalysisError::DuplicateScenario(key.clone()));
        }
    }
    let baseline = by_scenario
        .get(baseline_key)
        .ok_or_else(|| AnalysisError::BaselineMissing(baseline_key.to_string()))?;
    let base_totals: BTreeMap<&str, Joules> = baseline
        .iter()
        .map(|b| (b.service.as_str(), b.total_joules))
        .collect();
    let mut rows = Vec::new();
    for (scenario, breakdowns) in by_scenario {
        let mut sorted: Vec<&ServiceEnergyBreakdown> = breakdowns.iter().collect();
        sorted.sort_by(|a, b| a.service.cmp(&b.service));
        for b in sorted {
            let delta_vs_baseline_pct = if scenario == baseline_key {
                Some(0.0)
            } else {
                base_totals
                    .get(b.service.as_str())
                    .filter(|t| !t.is_zero())
                    .map(|t| 100.0 * (b.total_joules.as_f64() - t.as_f64()) / t.as_f64())
            };
            rows.push(ComparisonRow {
                scenario: scenario.to_string(),
                breakdown: b.clone(),
                delta_vs_baseline_pct,
                dominant: dominant_component(b).ok(),
                compute_only_underestimation_pct: compute_only_underestimation(b),
            });
        }
    }
    Ok(ComparisonTable {
        baseline: baseline_key.to_string(),
        rows,
    })
}

/// Reads the energy totals of each processed run directory and compares
/// them against `baseline_key`. Input order does not matter.
pub fn compare(dirs: &[PathBuf], baseline_key: &str) -> Result<ComparisonTable, AnalysisError> {
    let mut runs = Vec::with_capacity(dirs.len());
    for dir in dirs {
        let (key, path) = find_energy_totals(dir)?;
        runs.push((key, read_energy_totals(&path)?));
    }
    compare_breakdowns(&runs, baseline_key)
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn write_comparison(table: &ComparisonTable, path: &Path) -> Result<(), AnalysisError> {
    let mut w = csv_writer(path)?;
    w.write_record(COMPARISON_HEADER)?;
    for r in &table.rows {
        let b = &r.breakdown;
        w.write_record([
            r.scenario.clone(),
            b.service.clone(),
            b.compute_joules.to_string(),
            b.network_joules.to_string(),
            b.storage_joules.to_string(),
            b.total_joules.to_string(),
            b.share_compute.to_string(),
            b.share_network.to_string(),
            b.share_storage.to_string(),
            opt(r.delta_vs_baseline_pct),
            r.dominant.map(|c| c.to_string()).unwrap_or_default(),
            r.compute_only_underestimation_pct.to_string(),
        ])?;
    }
    finish(w, path)
}

/// Long format: one row per (scenario, service, component).
pub fn emit_plot_data(table: &ComparisonTable, path: &Path) -> Result<usize, AnalysisError> {
    if table.rows.is_empty() {
        return Err(AnalysisError::Empty);
    }
    let mut w = csv_writer(path)?;
    w.write_record(PLOT_DATA_HEADER)?;
    let mut n = 0;
    for r in &table.rows {
        for c in crate::model::Component::ALL {
            w.write_record([
                r.scenario.as_str(),
                r.breakdown.service.as_str(),
                c.as_str(),
                &r.breakdown.component(c).to_string(),
                &r.breakdown.share(c).to_string(),
            ])?;
            n += 1;
        }
    }
    finish(w, path)?;
    Ok(n)
}

/// Sample mean and Student-t half-width at `confidence`.
pub fn mean_ci(values: &[f64], confidence: f64) -> Result<(f64, f64), AnalysisError> {
    let n = values.len();
    if n < 2 {
        return Err(AnalysisError::TooFewValues(n));
    }
    if !(confidence > 0.0 && confidence < 1.0) {
        return Err(AnalysisError::Confidence(confidence));
    }
    let nf = n as f64;
    let mean = values.iter().sum::<f64>() / nf;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (nf - 1.0);
    if var == 0.0 {
        return Ok((mean, 0.0));
    }
    let t = StudentsT::new(0.0, 1.0, nf - 1.0)
        .expect("positive degrees of freedom")
        .inverse_cdf(1.0 - (1.0 - confidence) / 2.0);
    Ok((mean, t * (var / nf).sqrt()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Component;

    fn b(service: &str, c: u64, n: u64, s: u64) -> ServiceEnergyBreakdown {
        ServiceEnergyBreakdown::new(service, Joules::from_whole(c), Joules::from_whole(n), Joules::from_whole(s))
    }

    #[test]
    fn mean_ci_values() {
        assert_eq!(mean_ci(&[5.0, 5.0, 5.0], 0.95).unwrap(), (5.0, 0.0));
        let (m, h) = mean_ci(&[1.0, 2.0, 3.0], 0.95).unwrap();
        assert_eq!(m, 2.0);
        assert!((h - 2.484).abs() < 1e-3, "{h}");
        assert!(matches!(mean_ci(&[1.0], 0.95), Err(AnalysisError::TooFewValues(1))));
        assert!(mean_ci(&[1.0, 2.0], 1.0).is_err());
    }

    #[test]
    fn shipped_factors() {
        let f = default_factors();
        assert_eq!(f.network_kwh_per_gb(), 0.06);
        assert_eq!(f.storage_kwh_per_gb(), 0.002);
        assert!(parse_factors("network_kwh_per_gb: 1\nstorage_kwh_per_gb: 1\nextra: 2\n").is_err());
        assert!(parse_factors("network_kwh_per_gb: -1\nstorage_kwh_per_gb: 1\n").is_err());
    }

    #[test]
    fn baseline_alone_has_zero_deltas() {
        let t = compare_breakdowns(&[("baseline".into(), vec![b("a", 1, 2, 3), b("b", 0, 0, 0)])], "baseline").unwrap();
        assert!(t.rows.iter().all(|r| r.delta_vs_baseline_pct == Some(0.0)));
        assert_eq!(t.row("a", "a"), None);
        assert_eq!(t.row("baseline", "a").unwrap().dominant, Some(Component::Storage));
        assert_eq!(t.row("baseline", "b").unwrap().dominant, None);
    }

    #[test]
    fn deltas_and_missing_baseline() {
        let runs = vec![
            ("x".to_string(), vec![b("a", 2, 0, 0), b("new", 1, 0, 0)]),
            ("baseline".to_string(), vec![b("a", 1, 0, 0)]),
        ];
        let t = compare_breakdowns(&runs, "baseline").unwrap();
        assert_eq!(t.row("x", "a").unwrap().delta_vs_baseline_pct, Some(100.0));
        assert_eq!(t.row("x", "new").unwrap().delta_vs_baseline_pct, None);
        assert_eq!(t.rows[0].scenario, "baseline");
        assert!(matches!(compare_breakdowns(&runs, "zzz"), Err(AnalysisError::BaselineMissing(_))));
        let dup = vec![runs[1].clone(), runs[1].clone()];
        assert!(matches!(compare_breakdowns(&dup, "baseline"), Err(AnalysisError::DuplicateScenario(_))));
    }

    #[test]
    fn plot_data_rows() {
        let dir = tempfile::tempdir().unwrap();
        let t = compare_breakdowns(&[("baseline".into(), vec![b("a", 1, 2, 3)])], "baseline").unwrap();
        let path = dir.path().join(PLOT_DATA_FILE);
        assert_eq!(emit_plot_data(&t, &path).unwrap(), 3);
        let text = fs::read_to_string(&path).unwrap();
        assert_eq!(
            text,
            "scenario,service,component,joules,share\n\
             baseline,a,compute,1,0.16666666666666666\n\
             baseline,a,network,2,0.3333333333333333\n\
             baseline,a,storage,3,0.5\n"
        );
        let empty = ComparisonTable {
            baseline: "b".into(),
            rows: vec![],
        };
        assert!(emit_plot_data(&empty, &path).is_err());
    }

    #[test]
    fn energy_totals_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join(energy_totals_file_name("s"));
        let rows = vec![
            ServiceEnergyBreakdown::new("a", "0.1".parse().unwrap(), "0.2".parse().unwrap(), Joules::ZERO),
            b("b", 0, 0, 0),
        ];
        write_energy_totals(&rows, &[], &[], &path).unwrap();
        assert_eq!(read_energy_totals(&path).unwrap(), rows);
        let text = fs::read_to_string(&path).unwrap();
        assert!(text.lines().nth(1).unwrap().starts_with("a,0.1,0.2,0,0.3,"), "{text}");
        assert_eq!(find_energy_totals(dir.path()).unwrap().0, "s");
    }

    #[test]
    fn missing_report_is_fatal() {
        let dir = tempfile::tempdir().unwrap();
        let err = process_run(dir.path(), &default_factors(), &ServiceMap::default()).unwrap_err();
        assert!(err.to_string().contains(REPORT_FILE), "{err}");
    }

    #[test]
    fn absolute_names() {
        let names: Vec<String> = ABSOLUTE_GROUPS.iter().map(|(g, u)| absolute_file_name(g, u)).collect();
        assert_eq!(
            names,
            [
                "cadvisor_storage_usage_writes_all_absolute_bytes.csv",
                "cadvisor_network_bytes_received_all_absolute_bytes.csv",
                "pods_kepler_joules_all_absolute_joules.csv",
            ]
        );
    }
}
