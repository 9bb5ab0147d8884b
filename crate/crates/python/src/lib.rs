//! Python bindings for the energy model, the simulated runner and the
//! analysis pipeline.

use std::path::{Path, PathBuf};

use goxn_core::analysis::{self, ComparisonRow, COMPARISON_FILE, PLOT_DATA_FILE};
use goxn_core::model::{self, Joules, ServiceEnergyBreakdown};
use goxn_core::runner::{self, CATALOG_KEYS};
use goxn_core::simenv::SimEnvironment;
use goxn_core::treatments::TreatmentRegistry;
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn runtime_err(e: impl std::fmt::Display) -> PyErr {
    PyRuntimeError::new_err(e.to_string())
}

fn breakdown_dict<'py>(py: Python<'py>, b: &ServiceEnergyBreakdown) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("service", &b.service)?;
    d.set_item("compute_joules", b.compute_joules.as_f64())?;
    d.set_item("network_joules", b.network_joules.as_f64())?;
    d.set_item("storage_joules", b.storage_joules.as_f64())?;
    d.set_item("total_joules", b.total_joules.as_f64())?;
    d.set_item("total_joules_exact", b.total_joules.to_string())?;
    d.set_item("share_compute", b.share_compute)?;
    d.set_item("share_network", b.share_network)?;
    d.set_item("share_storage", b.share_storage)?;
    Ok(d)
}

fn row_dict<'py>(py: Python<'py>, r: &ComparisonRow) -> PyResult<Bound<'py, PyDict>> {
    let d = breakdown_dict(py, &r.breakdown)?;
    d.set_item("scenario", &r.scenario)?;
    d.set_item("delta_vs_baseline_pct", r.delta_vs_baseline_pct)?;
    d.set_item("dominant", r.dominant.map(|c| c.as_str()))?;
    d.set_item("compute_only_underestimation_pct", r.compute_only_underestimation_pct)?;
    Ok(d)
}

/// Converts an intensity in kWh/GB to J/byte.
#[pyfunction]
fn kwh_per_gb_to_j_per_byte(kwh_per_gb: f64) -> PyResult<f64> {
    model::kwh_per_gb_to_j_per_byte(kwh_per_gb).map_err(value_err)
}

/// Energy in joules attributed to `bytes` at `j_per_byte`.
#[pyfunction]
fn attributable_energy(bytes: u64, j_per_byte: f64) -> PyResult<f64> {
    model::attributable_energy(bytes, j_per_byte)
        .map(Joules::as_f64)
        .map_err(value_err)
}

/// Breakdown of one service; intensity factors come from `factors` or the
/// shipped defaults.
#[pyfunction]
#[pyo3(signature = (service, compute_joules, network_bytes, storage_bytes, factors=None))]
fn energy_breakdown<'py>(
    py: Python<'py>,
    service: &str,
    compute_joules: f64,
    network_bytes: u64,
    storage_bytes: u64,
    factors: Option<PathBuf>,
) -> PyResult<Bound<'py, PyDict>> {
    let f = analysis::load_factors(factors.as_deref()).map_err(value_err)?;
    let compute = Joules::from_f64(compute_joules).map_err(value_err)?;
    let b = ServiceEnergyBreakdown::new(
        service,
        compute,
        f.network_energy(network_bytes),
        f.storage_energy(storage_bytes),
    );
    let d = breakdown_dict(py, &b)?;
    d.set_item("compute_only_underestimation_pct", model::compute_only_underestimation(&b))?;
    d.set_item("dominant", model::dominant_component(&b).ok().map(|c| c.as_str()))?;
    Ok(d)
}

/// Sample mean and Student-t half-width.
#[pyfunction]
#[pyo3(signature = (values, confidence=0.95))]
fn mean_ci(values: Vec<f64>, confidence: f64) -> PyResult<(f64, f64)> {
    analysis::mean_ci(&values, confidence).map_err(value_err)
}

/// Keys of the shipped scenario catalog.
#[pyfunction]
fn catalog_keys() -> Vec<&'static str> {
    CATALOG_KEYS.to_vec()
}

/// Runs a catalog scenario against the simulator and returns the run directory.
#[pyfunction]
#[pyo3(signature = (key, output_dir, seed=0))]
fn run_scenario(key: &str, output_dir: PathBuf, seed: u64) -> PyResult<String> {
    let spec = runner::catalog_spec(key, &output_dir)
        .ok_or_else(|| value_err(format!("unknown scenario `{key}`")))?;
    let mut env = SimEnvironment::shipped(seed);
    runner::run_experiment(&spec, &mut env, &TreatmentRegistry::with_builtins()).map_err(runtime_err)?;
    Ok(spec.run_dir().display().to_string())
}

/// Writes the processed CSVs of a completed run and returns its breakdowns.
#[pyfunction]
#[pyo3(signature = (run_dir, factors=None, service_map=None))]
fn process_run<'py>(
    py: Python<'py>,
    run_dir: PathBuf,
    factors: Option<PathBuf>,
    service_map: Option<PathBuf>,
) -> PyResult<Vec<Bound<'py, PyDict>>> {
    let f = analysis::load_factors(factors.as_deref()).map_err(value_err)?;
    let map = analysis::load_service_map(service_map.as_deref()).map_err(value_err)?;
    let processed = analysis::process_run(&run_dir, &f, &map).map_err(runtime_err)?;
    processed.breakdowns.iter().map(|b| breakdown_dict(py, b)).collect()
}

/// Compares processed runs against `baseline`; with `output_dir` the
/// comparison and plot data CSVs are written there.
#[pyfunction]
#[pyo3(signature = (run_dirs, baseline, output_dir=None))]
fn compare<'py>(
    py: Python<'py>,
    run_dirs: Vec<PathBuf>,
    baseline: &str,
    output_dir: Option<PathBuf>,
) -> PyResult<Vec<Bound<'py, PyDict>>> {
    let table = analysis::compare(&run_dirs, baseline).map_err(runtime_err)?;
    if let Some(dir) = output_dir.as_deref() {
        write_outputs(&table, dir).map_err(runtime_err)?;
    }
    table.rows.iter().map(|r| row_dict(py, r)).collect()
}

fn write_outputs(table: &analysis::ComparisonTable, dir: &Path) -> Result<(), analysis::AnalysisError> {
    std::fs::create_dir_all(dir).map_err(|e| analysis::AnalysisError::Io {
        context: format!("creating {}", dir.display()),
        source: e,
    })?;
    analysis::write_comparison(table, &dir.join(COMPARISON_FILE))?;
    analysis::emit_plot_data(table, &dir.join(PLOT_DATA_FILE))?;
    Ok(())
}

#[pymodule]
fn goxn(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("ENGINE_VERSION", runner::ENGINE_VERSION)?;
    m.add_function(wrap_pyfunction!(kwh_per_gb_to_j_per_byte, m)?)?;
    m.add_function(wrap_pyfunction!(attributable_energy, m)?)?;
    m.add_function(wrap_pyfunction!(energy_breakdown, m)?)?;
    m.add_function(wrap_pyfunction!(mean_ci, m)?)?;
    m.add_function(wrap_pyfunction!(catalog_keys, m)?)?;
    m.add_function(wrap_pyfunction!(run_scenario, m)?)?;
    m.add_function(wrap_pyfunction!(process_run, m)?)?;
    m.add_function(wrap_pyfunction!(compare, m)?)?;
    Ok(())
}
