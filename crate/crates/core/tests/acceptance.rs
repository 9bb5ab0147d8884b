//! Acceptance criteria, one PASS/FAIL line each. Exits nonzero if any fails.

mod common;

use std::collections::BTreeMap;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use goxn_core::analysis::{
    absolute_file_name, compare_breakdowns, default_factors, energy_totals_file_name, mean_ci,
    read_energy_totals, ABSOLUTE_GROUPS, COMPARISON_FILE,
};
use goxn_core::metrics::store::{read_storage_snapshot, write_storage_snapshot};
use goxn_core::metrics::{
    increase_over_window, read_snapshot_store, write_store, MetricKind, MetricSample, MetricSeries,
    MetricSource, PromClient, ResponseQuery, StorageSnapshot,
};
use goxn_core::model::{
    aggregate_services, compute_only_underestimation, container_breakdown, dominant_component, Component,
    ContainerUsage, EnergyIntensityFactors, Joules, ServiceEnergyBreakdown,
};
use goxn_core::runner::{
    catalog_spec, persist_report, read_report, read_suite, ExperimentSpec, RunStatus, CATALOG_KEYS, SUITE_FILE,
};
use goxn_core::simenv::{serve_http, ServeClock, COMPUTE_METRIC, NETWORK_METRIC, STORAGE_METRIC};
use goxn_core::time::{TimeWindow, Timestamp};
use proptest::strategy::{Strategy, ValueTree};
use proptest::test_runner::{Config, TestRunner};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Check = fn() -> Result<(), String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

/// Counts unit ticks of the underlying counter: a drop means it restarted
/// from zero and ticked up to the new value.
fn brute_force_increase(values: &[u32]) -> u64 {
    let mut ticks = 0u64;
    for pair in values.windows(2) {
        let (mut from, to) = (pair[0], pair[1]);
        if to < from {
            from = 0;
        }
        while from < to {
            from += 1;
            ticks += 1;
        }
    }
    ticks
}

fn criterion_1() -> Result<(), String> {
    let started = Instant::now();
    let window = TimeWindow::from_secs(0, 10).unwrap();
    let mut cases = 0u32;
    for len in 0..=6u32 {
        for code in 0..4u32.pow(len) {
            let values: Vec<u32> = (0..len).map(|i| (code / 4u32.pow(i)) % 4).collect();
            let samples = values
                .iter()
                .enumerate()
                .map(|(i, &v)| MetricSample::new(Timestamp::from_secs(i as i64), v as f64))
                .collect();
            let series = MetricSeries::new("c", BTreeMap::new(), MetricKind::Counter, samples).unwrap();
            let got = increase_over_window(&series, &window).map_err(|e| e.to_string())?;
            let want = brute_force_increase(&values) as f64;
            ensure(got == want, || format!("{values:?}: got {got}, want {want}"))?;
            cases += 1;
        }
    }
    let elapsed = started.elapsed();
    ensure(cases >= 4096, || format!("only {cases} cases"))?;
    ensure(elapsed < Duration::from_secs(5), || format!("took {elapsed:?}"))
}

fn criterion_2() -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let window = TimeWindow::from_secs(0, 60).unwrap();
    for case in 0..1000 {
        let factors = EnergyIntensityFactors::from_kwh_per_gb(rng.random_range(0.0..1.0), rng.random_range(0.0..1.0))
            .map_err(|e| e.to_string())?;
        let n = rng.random_range(1..30);
        let usages: Vec<ContainerUsage> = (0..n)
            .map(|i| ContainerUsage {
                container_id: format!("c{i}"),
                pod: format!("p{i}"),
                service: format!("s{}", rng.random_range(0..6)),
                compute_joules: Joules::from_attojoules(rng.random_range(0..10u128.pow(24))),
                network_bytes: rng.random_range(0..1u64 << 40),
                storage_bytes: rng.random_range(0..1u64 << 40),
                window,
            })
            .collect();
        let services = aggregate_services(&usages, &factors).map_err(|e| e.to_string())?;
        let by_service: Joules = services.iter().map(|b| b.total_joules).sum();
        let by_container: Joules = usages.iter().map(|u| container_breakdown(u, &factors).total_joules).sum();
        ensure(by_service == by_container, || format!("case {case}: {by_service} != {by_container}"))?;
        for b in &services {
            ensure(b.total_joules == b.compute_joules + b.network_joules + b.storage_joules, || {
                format!("case {case}: {} total is not additive", b.service)
            })?;
            if !b.total_joules.is_zero() {
                let sum = b.share_compute + b.share_network + b.share_storage;
                ensure((sum - 1.0).abs() <= 1e-12, || format!("case {case}: shares sum to {sum}"))?;
            }
        }
    }
    Ok(())
}

/// Largest per-interval ledger accrual of each service component.
fn max_interval_accrual(
    env: &goxn_core::simenv::SimEnvironment,
    interval_ms: i64,
) -> Result<BTreeMap<(String, Component), f64>, String> {
    let sim = env.sim();
    let mut max: BTreeMap<(String, Component), f64> = BTreeMap::new();
    let mut t = 0;
    while t + interval_ms <= sim.now().millis() {
        let w = TimeWindow::new(Timestamp::from_millis(t), Timestamp::from_millis(t + interval_ms)).unwrap();
        for b in sim.ledger_breakdowns(&w, &default_factors()).map_err(|e| e.to_string())? {
            for c in Component::ALL {
                let e = max.entry((b.service.clone(), c)).or_default();
                *e = e.max(b.component(c).as_f64());
            }
        }
        t += interval_ms;
    }
    Ok(max)
}

fn criterion_3() -> Result<(), String> {
    let started = Instant::now();
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    for (settle, aligned) in [(0.0, true), (2.5, false)] {
        let mut env = common::sim_env(3, 5.0);
        let spec = ExperimentSpec {
            settle_seconds: settle,
            output_dir: dir.path().join(if aligned { "aligned" } else { "offset" }),
            ..ExperimentSpec::new("baseline", "sim:default")
        };
        let (report, processed) = common::run_and_process(&spec, &mut env);
        ensure(report.window.len_millis() == 60_000, || "window is not 60 s".into())?;
        let totals = read_energy_totals(&spec.run_dir().join(energy_totals_file_name("baseline")))
            .map_err(|e| e.to_string())?;
        ensure(totals == processed.breakdowns, || "energy_totals differ from processed breakdowns".into())?;
        let ledger = env
            .sim()
            .ledger_breakdowns(&report.window, &default_factors())
            .map_err(|e| e.to_string())?;
        ensure(ledger.len() == totals.len(), || "service sets differ".into())?;
        if aligned {
            ensure(totals == ledger, || format!("aligned window: {totals:?} != {ledger:?}"))?;
        } else {
            let tol = max_interval_accrual(&env, 5_000)?;
            for (p, l) in totals.iter().zip(&ledger) {
                ensure(p.service == l.service, || "service order differs".into())?;
                for c in Component::ALL {
                    let bound = tol[&(l.service.clone(), c)] * (1.0 + 1e-9) + 1e-9;
                    let diff = (p.component(c).as_f64() - l.component(c).as_f64()).abs();
                    ensure(diff <= bound, || format!("{} {c}: |diff| {diff} > {bound}", l.service))?;
                }
            }
        }
    }
    let elapsed = started.elapsed();
    ensure(elapsed < Duration::from_secs(10), || format!("took {elapsed:?}"))
}

fn tracing_breakdowns(seed: u64, root: &Path) -> Result<Vec<(String, Vec<ServiceEnergyBreakdown>)>, String> {
    let mut env = common::sim_env(seed, 60.0);
    let mut out = Vec::new();
    for key in ["baseline", "tracing-low", "tracing-medium", "tracing-high"] {
        let spec = catalog_spec(key, root).unwrap();
        let (_, processed) = common::run_and_process(&spec, &mut env);
        out.push((key.to_string(), processed.breakdowns));
    }
    Ok(out)
}

fn criterion_4() -> Result<(), String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let runs = tracing_breakdowns(4, dir.path())?;
    let table = compare_breakdowns(&runs, "baseline").map_err(|e| e.to_string())?;
    let sink = common::sim_env(4, 60.0).sim().topology().telemetry_sink;
    let mut shares = Vec::new();
    for key in ["tracing-low", "tracing-medium", "tracing-high"] {
        let row = table.row(key, &sink).ok_or_else(|| format!("no {sink} row in {key}"))?;
        shares.push(row.breakdown.share_network + row.breakdown.share_storage);
    }
    ensure(shares[0] < shares[1] && shares[1] < shares[2], || format!("{sink} shares {shares:?}"))?;
    let high = table.row("tracing-high", &sink).unwrap();
    let dominant = dominant_component(&high.breakdown).map_err(|e| e.to_string())?;
    ensure(dominant != Component::Compute, || format!("{sink} at 50% is {dominant}-dominant"))
}

fn criterion_5() -> Result<(), String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let runs = tracing_breakdowns(5, dir.path())?;
    let topology = common::sim_env(5, 60.0).sim().topology();
    let (_, high) = runs.iter().find(|(k, _)| k == "tracing-high").unwrap();
    let best = high
        .iter()
        .filter(|b| b.service == topology.telemetry_sink || b.service == topology.storage_backend)
        .map(|b| (compute_only_underestimation(b), b.service.clone()))
        .fold((0.0, String::new()), |a, b| if b.0 > a.0 { b } else { a });
    ensure(best.0 >= 50.0, || format!("best auxiliary underestimation {:.2}% ({})", best.0, best.1))
}

fn run_catalog_suite(out: &Path) -> Result<(), String> {
    let status = Command::new(env!("CARGO_BIN_EXE_goxn"))
        .args(["suite", "catalog", "--env", "sim", "--seed", "7", "--output"])
        .arg(out)
        .output()
        .map_err(|e| e.to_string())?;
    ensure(status.status.success(), || {
        format!("suite exited with {}: {}", status.status, String::from_utf8_lossy(&status.stderr))
    })
}

fn criterion_6() -> Result<(), String> {
    let started = Instant::now();
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    run_catalog_suite(dir.path())?;
    let manifest = read_suite(dir.path()).map_err(|e| e.to_string())?;
    ensure(dir.path().join(SUITE_FILE).is_file(), || "no suite.yaml".into())?;
    ensure(dir.path().join(COMPARISON_FILE).is_file(), || "no comparison.csv".into())?;
    ensure(manifest.entries.len() == 7, || format!("{} suite entries", manifest.entries.len()))?;
    for key in CATALOG_KEYS {
        let entry = manifest.entries.iter().find(|e| e.scenario == key).ok_or_else(|| format!("{key} missing"))?;
        ensure(entry.status == RunStatus::Ok, || format!("{key} failed"))?;
        let run = dir.path().join(key);
        let mut names: Vec<String> = ABSOLUTE_GROUPS.iter().map(|(g, u)| absolute_file_name(g, u)).collect();
        names.push(energy_totals_file_name(key));
        for name in names {
            ensure(run.join(&name).is_file(), || format!("{key}/{name} missing"))?;
        }
    }
    let elapsed = started.elapsed();
    ensure(elapsed < Duration::from_secs(300), || format!("took {elapsed:?}"))
}

fn criterion_7() -> Result<(), String> {
    let a = tempfile::tempdir().map_err(|e| e.to_string())?;
    let b = tempfile::tempdir().map_err(|e| e.to_string())?;
    run_catalog_suite(a.path())?;
    run_catalog_suite(b.path())?;
    let (ta, tb) = (common::csv_tree(a.path()), common::csv_tree(b.path()));
    ensure(ta.len() >= 7 * 4 + 2, || format!("only {} CSV files", ta.len()))?;
    ensure(ta.keys().eq(tb.keys()), || "CSV file sets differ".into())?;
    for (path, bytes) in &ta {
        ensure(&tb[path] == bytes, || format!("{} differs", path.display()))?;
    }
    Ok(())
}

fn criterion_8() -> Result<(), String> {
    let mut runner = TestRunner::new(Config {
        cases: 200,
        ..Config::default()
    });
    let snapshots = (0i64..1_000_000, 1i64..1_000_000);
    for case in 0..200 {
        let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
        let store = common::strategies::raw_store()
            .new_tree(&mut runner)
            .map_err(|e| e.to_string())?
            .current();
        write_store(&store, &dir.path().join("raw")).map_err(|e| e.to_string())?;
        let back = read_snapshot_store(&dir.path().join("raw")).map_err(|e| e.to_string())?;
        ensure(back == store, || format!("case {case}: raw store changed on round-trip"))?;

        let (t0, dt) = snapshots.new_tree(&mut runner).map_err(|e| e.to_string())?.current();
        let mut paths = Vec::new();
        for secs in [t0, t0 + dt] {
            let snap = StorageSnapshot::from_rows(
                Timestamp::from_secs(secs),
                [("sim/a-0/a".to_string(), secs as u64), ("sim/b-0/b".to_string(), 7)],
            )
            .map_err(|e| e.to_string())?;
            let path = write_storage_snapshot(&snap, &dir.path().join("storage_snapshots")).map_err(|e| e.to_string())?;
            ensure(read_storage_snapshot(&path).map_err(|e| e.to_string())? == snap, || {
                format!("case {case}: snapshot changed on round-trip")
            })?;
            paths.push(format!("storage_snapshots/{}", path.file_name().unwrap().to_string_lossy()));
        }
        let report = common::strategies::report(paths)
            .new_tree(&mut runner)
            .map_err(|e| e.to_string())?
            .current();
        persist_report(&report, dir.path()).map_err(|e| e.to_string())?;
        let back = read_report(dir.path()).map_err(|e| e.to_string())?;
        ensure(back == report, || format!("case {case}: report changed on round-trip"))?;
    }
    Ok(())
}

fn criterion_9() -> Result<(), String> {
    let (mean, half) = mean_ci(&[1.0, 2.0, 3.0], 0.95).map_err(|e| e.to_string())?;
    // t(0.975, 2) = 4.303; s = 1; 4.303 / sqrt(3)
    let hand = 4.303 / 3f64.sqrt();
    ensure(mean == 2.0, || format!("mean {mean}"))?;
    ensure((half - 2.484).abs() <= 1e-3 && (half - hand).abs() <= 1e-3, || format!("half-width {half}"))
}

fn criterion_10() -> Result<(), String> {
    let env = common::sim_env(10, 5.0);
    let sim = env.sim().clone();
    for _ in 0..200 {
        sim.handle_request("/recommendation");
        sim.advance_clock(Duration::from_millis(250)).map_err(|e| e.to_string())?;
    }
    sim.inject_counter_reset();
    sim.advance_clock(Duration::from_secs(20)).map_err(|e| e.to_string())?;
    let server = serve_http(sim.clone(), "127.0.0.1:0", ServeClock::Manual).map_err(|e| e.to_string())?;
    let client = PromClient::new(&server.url());
    let windows = [
        TimeWindow::from_secs(0, 70).unwrap(),
        TimeWindow::new(Timestamp::from_millis(12_500), Timestamp::from_millis(47_500)).unwrap(),
    ];
    let selectors = [
        COMPUTE_METRIC.to_string(),
        NETWORK_METRIC.to_string(),
        format!("{STORAGE_METRIC}{{container=\"otel-collector\"}}"),
        format!("{COMPUTE_METRIC}{{container_name!=\"flagd\"}}"),
    ];
    let mut compared = 0;
    for w in &windows {
        for sel in &selectors {
            let query = ResponseQuery::new("q", sel, 5.0, MetricKind::Counter);
            let mut wire = client.query_range(&query, w).map_err(|e| format!("{sel}: {e}"))?;
            let mut local = sim.query_range_sim(sel, w).map_err(|e| e.to_string())?;
            let key = |s: &MetricSeries| s.labels.clone();
            wire.sort_by_key(key);
            local.sort_by_key(key);
            ensure(!local.is_empty(), || format!("{sel}: no series"))?;
            ensure(wire.len() == local.len(), || format!("{sel}: {} vs {} series", wire.len(), local.len()))?;
            for (a, b) in wire.iter().zip(&local) {
                ensure(a.labels == b.labels && a.samples() == b.samples(), || {
                    format!("{sel}: series differ:\n{a:?}\n{b:?}")
                })?;
                compared += 1;
            }
        }
    }
    server.shutdown();
    ensure(compared > 0, || "nothing compared".into())
}

fn main() {
    let checks: [(&str, Check); 10] = [
        ("counter increase equals brute force on all short sequences", criterion_1),
        ("conservation and additivity over random container sets", criterion_2),
        ("pipeline energy totals match the simulator ledger", criterion_3),
        ("sink network+storage share rises with trace sampling", criterion_4),
        ("tracing-high compute-only underestimation of an auxiliary service >= 50%", criterion_5),
        ("catalog suite emits every CSV family, suite.yaml and comparison.csv", criterion_6),
        ("seeded catalog suites produce byte-identical CSV trees", criterion_7),
        ("report and raw store round-trips", criterion_8),
        ("mean_ci half-width for [1, 2, 3]", criterion_9),
        ("query_range over HTTP equals the in-memory query", criterion_10),
    ];
    let mut failed = 0;
    for (i, (name, check)) in checks.into_iter().enumerate() {
        let started = Instant::now();
        let result = std::panic::catch_unwind(check).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let secs = started.elapsed().as_secs_f64();
        match result {
            Ok(()) => println!("PASS criterion {:>2}: {name} ({secs:.2} s)", i + 1),
            Err(e) => {
                failed += 1;
                println!("FAIL criterion {:>2}: {name} ({secs:.2} s): {e}", i + 1);
            }
        }
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
