//! Container-level metric collection and counter reduction.
//!
//! Series come from a [`MetricSource`]: a Prometheus-compatible HTTP endpoint
//! ([`prom::PromClient`]) or the in-process simulator. Collected series are
//! grouped per configured response query into a [`store::RawStore`], persisted
//! as CSV plus a manifest, and reduced to per-container window totals by
//! [`usage::usages_from_store`].

pub mod prom;
pub mod store;
pub mod usage;

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::time::{TimeError, TimeWindow, Timestamp};

pub use prom::{encode_error, encode_matrix, PromClient, RetryPolicy, QUERY_RANGE_PATH};
pub use store::{read_replication_dir, read_snapshot_store, write_store, QueryGroup, QueryStatus, RawStore};
pub use usage::{usages_from_store, ExtractedUsages, ModelInputs, UsageWarning};

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("series `{0}` is a gauge; window increase needs a counter")]
    KindMismatch(String),
    #[error("invalid series: {0}")]
    InvalidSeries(String),
    #[error("invalid query `{name}`: {reason}")]
    InvalidQuery { name: String, reason: String },
    #[error("snapshot taken at {after} is not after snapshot taken at {before}")]
    SnapshotOrder { before: Timestamp, after: Timestamp },
    #[error("duplicate container `{0}` in storage snapshot")]
    DuplicateContainer(String),
    #[error("store has no usable model input series")]
    EmptyInput,
    #[error("missing store manifest at {0}")]
    MissingManifest(String),
    #[error("{file}:{line}: {reason}")]
    Malformed {
        file: String,
        line: u64,
        reason: String,
    },
    #[error(transparent)]
    Time(#[from] TimeError),
    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Yaml(#[from] serde_yaml::Error),
}

impl MetricsError {
    pub(crate) fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        MetricsError::Io {
            context: context.into(),
            source,
        }
    }
}

/// Failure of a single range query.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum CollectError {
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("malformed response: {0}")]
    Parse(String),
    #[error("query rejected: {0}")]
    Rejected(String),
}

impl CollectError {
    pub fn is_retriable(&self) -> bool {
        matches!(self, CollectError::Transport(_))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricKind {
    #[default]
    Counter,
    Gauge,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricSample {
    pub timestamp: Timestamp,
    pub value: f64,
}

impl MetricSample {
    pub fn new(timestamp: Timestamp, value: f64) -> Self {
        MetricSample { timestamp, value }
    }
}

/// Samples of one label set, strictly increasing in time.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricSeries {
    pub metric_name: String,
    pub labels: BTreeMap<String, String>,
    pub kind: MetricKind,
    samples: Vec<MetricSample>,
}

impl MetricSeries {
    /// Empty label values are dropped (an empty label is an absent label).
    pub fn new(
        metric_name: impl Into<String>,
        labels: BTreeMap<String, String>,
        kind: MetricKind,
        samples: Vec<MetricSample>,
    ) -> Result<Self, MetricsError> {
        if let Some(s) = samples.iter().find(|s| !s.value.is_finite()) {
            return Err(MetricsError::InvalidSeries(format!(
                "non-finite value at {}",
                s.timestamp
            )));
        }
        if let Some(w) = samples.windows(2).find(|w| w[0].timestamp >= w[1].timestamp) {
            return Err(MetricsError::InvalidSeries(format!(
                "timestamps not strictly increasing at {}",
                w[1].timestamp
            )));
        }
        let labels = labels.into_iter().filter(|(_, v)| !v.is_empty()).collect();
        Ok(MetricSeries {
            metric_name: metric_name.into(),
            labels,
            kind,
            samples,
        })
    }

    pub fn samples(&self) -> &[MetricSample] {
        &self.samples
    }

    pub fn label(&self, key: &str) -> Option<&str> {
        self.labels.get(key).map(String::as_str)
    }

    pub fn in_window<'a>(&'a self, w: &'a TimeWindow) -> impl Iterator<Item = &'a MetricSample> + 'a {
        self.samples.iter().filter(move |s| w.contains(s.timestamp))
    }

    /// Ordering key used to keep collected groups deterministic.
    pub(crate) fn sort_key(&self) -> (&str, &BTreeMap<String, String>) {
        (&self.metric_name, &self.labels)
    }
}

impl fmt::Display for MetricSeries {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.metric_name)?;
        f.write_str("{")?;
        for (i, (k, v)) in self.labels.iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            write!(f, "{k}={v:?}")?;
        }
        f.write_str("}")
    }
}

/// A configured PromQL query whose result becomes one store group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResponseQuery {
    pub name: String,
    pub promql: String,
    pub step_seconds: f64,
    #[serde(default)]
    pub kind: MetricKind,
}

impl ResponseQuery {
    pub fn new(name: &str, promql: &str, step_seconds: f64, kind: MetricKind) -> Self {
        ResponseQuery {
            name: name.to_string(),
            promql: promql.to_string(),
            step_seconds,
            kind,
        }
    }

    pub fn validate(&self) -> Result<(), MetricsError> {
        let invalid = |reason: &str| MetricsError::InvalidQuery {
            name: self.name.clone(),
            reason: reason.to_string(),
        };
        if !is_file_stem(&self.name) {
            return Err(invalid("name must be non-empty [A-Za-z0-9_.-] and not start with '.'"));
        }
        if !(self.step_seconds.is_finite() && self.step_seconds > 0.0) {
            return Err(invalid("step_seconds must be positive"));
        }
        Ok(())
    }

    pub fn step_millis(&self) -> i64 {
        (self.step_seconds * 1000.0).round() as i64
    }
}

pub(crate) fn is_file_stem(s: &str) -> bool {
    !s.is_empty()
        && !s.starts_with('.')
        && s.bytes().all(|b| b.is_ascii_alphanumeric() || matches!(b, b'_' | b'-' | b'.'))
}

/// Checks the window covers at least one step of every query.
pub fn validate_window(queries: &[ResponseQuery], w: &TimeWindow) -> Result<(), MetricsError> {
    for q in queries {
        q.validate()?;
        if w.len_millis() < q.step_millis() {
            return Err(MetricsError::InvalidQuery {
                name: q.name.clone(),
                reason: format!("window {w} is shorter than one step"),
            });
        }
    }
    Ok(())
}

/// Reset-aware increase of a counter over the samples inside `w`.
///
/// Consecutive pairs contribute `v[i+1] - v[i]` when non-negative, otherwise
/// `v[i+1]` (the counter restarted from zero). Monotone runs are reduced as
/// `last - first`, so a series without resets yields exactly that difference.
/// No extrapolation to the window bounds.
pub fn increase_over_window(s: &MetricSeries, w: &TimeWindow) -> Result<f64, MetricsError> {
    if s.kind != MetricKind::Counter {
        return Err(MetricsError::KindMismatch(s.to_string()));
    }
    let values: Vec<f64> = s.in_window(w).map(|x| x.value).collect();
    Ok(counter_increase(&values))
}

pub(crate) fn counter_increase(values: &[f64]) -> f64 {
    let Some((&first, rest)) = values.split_first() else {
        return 0.0;
    };
    let mut total = 0.0;
    let mut run_start = first;
    let mut prev = first;
    for &v in rest {
        if v < prev {
            total += prev - run_start;
            total += v;
            run_start = v;
        }
        prev = v;
    }
    total + (prev - run_start)
}

/// Identity of the container a series belongs to: `(container_id, pod)`.
///
/// Recognises Kubernetes/cAdvisor (`pod`, `container`, `namespace`) and
/// Kepler (`pod_name`, `container_name`, `container_namespace`) label
/// conventions, or an explicit `container_id` label.
pub fn container_identity(labels: &BTreeMap<String, String>) -> Option<(String, String)> {
    let get = |keys: &[&str]| {
        keys.iter()
            .find_map(|k| labels.get(*k).filter(|v| !v.is_empty()))
            .cloned()
    };
    let pod = get(&["pod", "pod_name"]);
    if let Some(id) = get(&["container_id"]) {
        let pod = pod.unwrap_or_else(|| id.split('/').next().unwrap_or(&id).to_string());
        return Some((id, pod));
    }
    let container = get(&["container", "container_name"]);
    let namespace = get(&["namespace", "container_namespace", "pod_namespace"]);
    let pod_or_container = pod.clone().or_else(|| container.clone())?;
    let mut parts = Vec::with_capacity(3);
    if let Some(ns) = namespace {
        parts.push(ns);
    }
    if let Some(p) = &pod {
        parts.push(p.clone());
    }
    if let Some(c) = container {
        parts.push(c);
    }
    Some((parts.join("/"), pod.unwrap_or(pod_or_container)))
}

/// Something that can answer range queries.
pub trait MetricSource: Sync {
    fn query_range(
        &self,
        query: &ResponseQuery,
        window: &TimeWindow,
    ) -> Result<Vec<MetricSeries>, CollectError>;
}

/// Evaluates every query over `window` concurrently. Per-query failures are
/// recorded in the returned store, never dropped; series without samples are
/// omitted (a range query has no points for them).
pub fn collect_responses<S: MetricSource + ?Sized>(
    source: &S,
    queries: &[ResponseQuery],
    window: &TimeWindow,
) -> Result<RawStore, MetricsError> {
    let mut names = std::collections::BTreeSet::new();
    for q in queries {
        q.validate()?;
        if !names.insert(q.name.as_str()) {
            return Err(MetricsError::InvalidQuery {
                name: q.name.clone(),
                reason: "duplicate query name".into(),
            });
        }
    }
    let results: Vec<(ResponseQuery, Result<Vec<MetricSeries>, CollectError>)> =
        std::thread::scope(|scope| {
            let handles: Vec<_> = queries
                .iter()
                .map(|q| scope.spawn(move || (q.clone(), source.query_range(q, window))))
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("query thread panicked"))
                .collect()
        });
    let mut store = RawStore::new(*window);
    for (query, result) in results {
        let group = match result {
            Ok(mut series) => {
                series.retain(|s| !s.samples().is_empty());
                for s in &mut series {
                    s.kind = query.kind;
                }
                series.sort_by(|a, b| a.sort_key().cmp(&b.sort_key()));
                QueryGroup::ok(query, series)
            }
            Err(e) => {
                log::warn!("query `{}` failed: {e}", query.name);
                QueryGroup::failed(query, e.to_string())
            }
        };
        store.insert(group);
    }
    Ok(store)
}

/// Per-container disk usage at one instant.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StorageSnapshot {
    pub taken_at: Timestamp,
    pub rows: BTreeMap<String, u64>,
}

impl StorageSnapshot {
    pub fn new(taken_at: Timestamp) -> Self {
        StorageSnapshot {
            taken_at,
            rows: BTreeMap::new(),
        }
    }

    pub fn from_rows(
        taken_at: Timestamp,
        rows: impl IntoIterator<Item = (String, u64)>,
    ) -> Result<Self, MetricsError> {
        let mut snap = StorageSnapshot::new(taken_at);
        for (id, bytes) in rows {
            if snap.rows.insert(id.clone(), bytes).is_some() {
                return Err(MetricsError::DuplicateContainer(id));
            }
        }
        Ok(snap)
    }
}

/// Per-container growth between two snapshots. Containers that appear count
/// their full value, containers that disappear count zero, shrinkage is zero.
pub fn snapshot_delta(
    before: &StorageSnapshot,
    after: &StorageSnapshot,
) -> Result<BTreeMap<String, u64>, MetricsError> {
    if before.taken_at >= after.taken_at {
        return Err(MetricsError::SnapshotOrder {
            before: before.taken_at,
            after: after.taken_at,
        });
    }
    let mut out: BTreeMap<String, u64> = before.rows.keys().map(|k| (k.clone(), 0)).collect();
    for (id, &now) in &after.rows {
        let prior = before.rows.get(id).copied().unwrap_or(0);
        out.insert(id.clone(), now.saturating_sub(prior));
    }
    Ok(out)
}
