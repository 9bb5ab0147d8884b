#![allow(dead_code)]

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use goxn_core::analysis::{default_factors, process_run, ProcessedRun};
use goxn_core::model::ServiceMap;
use goxn_core::runner::{run_experiment, ExperimentReport, ExperimentSpec};
use goxn_core::simenv::{SimEnvironment, SimSettings, TopologySpec};
use goxn_core::treatments::TreatmentRegistry;

/// Shipped topology with its settings, overriding seed and scrape interval.
pub fn sim_env(seed: u64, scrape_interval_s: f64) -> SimEnvironment {
    let topology = TopologySpec::shipped_default();
    let settings = SimSettings {
        seed,
        scrape_interval_s,
        ..topology.settings.clone()
    };
    SimEnvironment::new(topology, settings).unwrap()
}

pub fn run_and_process(spec: &ExperimentSpec, env: &mut SimEnvironment) -> (ExperimentReport, ProcessedRun) {
    let report = run_experiment(spec, env, &TreatmentRegistry::with_builtins()).expect("run completes");
    let processed = process_run(&spec.run_dir(), &default_factors(), &ServiceMap::default()).expect("run processes");
    (report, processed)
}

/// Every `.csv` file under `root`, keyed by relative path.
pub fn csv_tree(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<PathBuf, Vec<u8>>) {
        for entry in fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                walk(root, &path, out);
            } else if path.extension().is_some_and(|x| x == "csv") {
                out.insert(path.strip_prefix(root).unwrap().to_path_buf(), fs::read(&path).unwrap());
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(root, root, &mut out);
    out
}

pub mod strategies {
    use std::collections::BTreeMap;

    use goxn_core::loadgen::LoadStats;
    use goxn_core::metrics::{MetricKind, MetricSample, MetricSeries, QueryGroup, RawStore, ResponseQuery};
    use goxn_core::runner::{ExperimentReport, ENGINE_VERSION};
    use goxn_core::time::{TimeWindow, Timestamp};
    use goxn_core::treatments::{Scalar, TreatmentOutcome};
    use proptest::collection::{btree_map, btree_set, vec};
    use proptest::option;
    use proptest::prelude::*;

    pub fn window() -> impl Strategy<Value = TimeWindow> {
        (0i64..1_000_000_000, 1i64..10_000_000)
            .prop_map(|(s, len)| TimeWindow::new(Timestamp::from_millis(s), Timestamp::from_millis(s + len)).unwrap())
    }

    fn scalar() -> impl Strategy<Value = Scalar> {
        prop_oneof![
            any::<bool>().prop_map(Scalar::Bool),
            any::<i64>().prop_map(Scalar::Int),
            (-1e9f64..1e9).prop_map(Scalar::Float),
            "[a-z]{1,8}".prop_map(Scalar::Str),
        ]
    }

    fn outcome(w: TimeWindow) -> impl Strategy<Value = TreatmentOutcome> {
        let start = w.start().millis();
        let end = w.end().millis();
        (
            "[a-z_]{1,12}",
            "[a-z-]{0,12}",
            btree_map("[a-z_]{1,8}", scalar(), 0..3),
            0..=start,
            0i64..1_000_000,
            any::<bool>(),
            "[ -~]{0,20}",
            vec("ACTION [a-z_]{1,8}( [a-z]{1,4}=[0-9]{1,3})?", 0..3),
        )
            .prop_flat_map(move |(key, target, params, verified_ms, revert_after, verified, detail, restore)| {
                (0..=verified_ms).prop_map(move |applied_ms| TreatmentOutcome {
                    key: key.clone(),
                    target: target.clone(),
                    params: params.clone(),
                    applied_at: Some(Timestamp::from_millis(applied_ms)),
                    verified_at: Some(Timestamp::from_millis(verified_ms)),
                    reverted_at: Some(Timestamp::from_millis(end + revert_after)),
                    verified,
                    detail: detail.clone(),
                    restore: restore.clone(),
                })
            })
    }

    fn load_stats() -> impl Strategy<Value = LoadStats> {
        (
            (0u64..1_000_000, 0u64..1_000_000, 0u64..1_000_000),
            (0.0f64..10.0, 0.0f64..10.0, 0.0f64..10.0, 0.0f64..1e4),
            option::of(0i64..1_000_000_000),
            option::of(0i64..1_000_000_000),
            btree_map("/[a-z]{0,10}", 0u64..1_000_000, 0..4),
        )
            .prop_map(|((sent, completed, failed), (p50, p95, p99, rate), first, last, route_counts)| LoadStats {
                sent,
                completed,
                failed,
                p50,
                p95,
                p99,
                actual_rate: rate,
                first_dispatch: first.map(Timestamp::from_millis),
                last_dispatch: last.map(Timestamp::from_millis),
                route_counts,
            })
    }

    /// A report referencing `raw` and the given snapshot paths.
    pub fn report(snapshot_paths: Vec<String>) -> impl Strategy<Value = ExperimentReport> {
        window().prop_flat_map(move |w| {
            (
                "[a-z][a-z0-9-]{0,10}",
                "sim:default|http://[a-z]{1,8}:[0-9]{2,4}",
                vec(outcome(w), 0..3),
                load_stats(),
                vec("[a-z_]{1,10}", 0..3),
            )
                .prop_map({
                    let snapshot_paths = snapshot_paths.clone();
                    move |(name, sue, treatments, load_stats, failed_queries)| ExperimentReport {
                        scenario_key: name.clone(),
                        name,
                        sue,
                        window: w,
                        treatments,
                        load_stats,
                        raw_store_path: "raw".into(),
                        storage_snapshot_paths: snapshot_paths.clone(),
                        failed_queries,
                        engine_version: ENGINE_VERSION.into(),
                    }
                })
        })
    }

    fn series(index: usize, name: String) -> impl Strategy<Value = MetricSeries> {
        (
            btree_map("[a-z]{1,6}", "[a-z0-9/_-]{1,10}", 0..3),
            btree_set(0i64..100_000_000, 1..8),
        )
            .prop_flat_map(move |(labels, times)| {
                let name = name.clone();
                let n = times.len();
                vec(0.0f64..1e12, n).prop_map(move |values| {
                    let mut labels = labels.clone();
                    labels.insert("series_index".into(), index.to_string());
                    let samples = times
                        .iter()
                        .zip(values)
                        .map(|(&t, v)| MetricSample::new(Timestamp::from_millis(t), v))
                        .collect();
                    MetricSeries::new(name.clone(), labels, MetricKind::Counter, samples).unwrap()
                })
            })
    }

    fn group(name: String) -> impl Strategy<Value = QueryGroup> {
        let query = (
            "[a-z_{}=\"]{1,30}",
            1u32..600,
            prop_oneof![Just(MetricKind::Counter), Just(MetricKind::Gauge)],
        );
        (query, any::<bool>(), 0usize..4, "[a-z]{0,6}", "[ -~]{1,30}").prop_flat_map(
            move |((promql, step, kind), ok, n, metric, error)| {
                let q = ResponseQuery::new(&name, &promql, step as f64, kind);
                let all: Vec<_> = (0..n).map(|i| series(i, metric.clone())).collect();
                all.prop_map(move |ss| {
                    if ok {
                        let ss = ss
                            .into_iter()
                            .map(|s| {
                                let samples = s.samples().to_vec();
                                MetricSeries::new(s.metric_name, s.labels, q.kind, samples).unwrap()
                            })
                            .collect();
                        QueryGroup::ok(q.clone(), ss)
                    } else {
                        QueryGroup::failed(q.clone(), error.clone())
                    }
                })
            },
        )
    }

    pub fn raw_store() -> impl Strategy<Value = RawStore> {
        (window(), btree_set("[a-z][a-z0-9_]{0,10}", 1..4)).prop_flat_map(|(w, names)| {
            let groups: Vec<_> = names.into_iter().map(group).collect();
            groups.prop_map(move |gs| {
                let mut store = RawStore::new(w);
                for g in gs {
                    store.insert(g);
                }
                store
            })
        })
    }

    pub fn labels() -> impl Strategy<Value = BTreeMap<String, String>> {
        btree_map("[a-z]{1,6}", "[a-z0-9]{1,6}", 0..4)
    }
}
