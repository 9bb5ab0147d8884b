//! On-disk raw store: `manifest.yaml` plus one CSV per query.
//!
//! ```text
//! <dir>/manifest.yaml      window, queries, kinds, status, series counts
//! <dir>/<query>.csv        timestamp,<label columns...>,value
//! ```
//!
//! Timestamps are decimal seconds with millisecond precision, values use the
//! shortest decimal that round-trips, so write/read is lossless.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{MetricKind, MetricSample, MetricSeries, MetricsError, ResponseQuery, StorageSnapshot};
use crate::time::{TimeWindow, Timestamp};

pub const MANIFEST_FILE: &str = "manifest.yaml";
const FORMAT: &str = "goxn-raw-store/1";
const NAME_COLUMN: &str = "__name__";

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum QueryStatus {
    Ok,
    Failed(String),
}

impl QueryStatus {
    pub fn is_ok(&self) -> bool {
        matches!(self, QueryStatus::Ok)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QueryGroup {
    pub query: ResponseQuery,
    pub status: QueryStatus,
    pub series: Vec<MetricSeries>,
}

impl QueryGroup {
    pub fn ok(query: ResponseQuery, series: Vec<MetricSeries>) -> Self {
        QueryGroup {
            query,
            status: QueryStatus::Ok,
            series,
        }
    }

    pub fn failed(query: ResponseQuery, error: String) -> Self {
        QueryGroup {
            query,
            status: QueryStatus::Failed(error),
            series: Vec::new(),
        }
    }
}

/// All series collected for one measurement window, keyed by query name.
#[derive(Debug, Clone, PartialEq)]
pub struct RawStore {
    window: TimeWindow,
    groups: BTreeMap<String, QueryGroup>,
}

impl RawStore {
    pub fn new(window: TimeWindow) -> Self {
        RawStore {
            window,
            groups: BTreeMap::new(),
        }
    }

    pub fn window(&self) -> TimeWindow {
        self.window
    }

    pub fn groups(&self) -> &BTreeMap<String, QueryGroup> {
        &self.groups
    }

    pub fn group(&self, name: &str) -> Option<&QueryGroup> {
        self.groups.get(name)
    }

    pub fn insert(&mut self, group: QueryGroup) {
        self.groups.insert(group.query.name.clone(), group);
    }

    pub fn failed_queries(&self) -> Vec<&str> {
        self.groups
            .values()
            .filter(|g| !g.status.is_ok())
            .map(|g| g.query.name.as_str())
            .collect()
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    format: String,
    window: TimeWindow,
    queries: Vec<ManifestEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestEntry {
    name: String,
    promql: String,
    step_seconds: f64,
    kind: MetricKind,
    status: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    error: Option<String>,
    series: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    file: Option<String>,
}

pub(crate) fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>, MetricsError> {
    let file = fs::File::create(path)
        .map_err(|e| MetricsError::io(format!("create {}", path.display()), e))?;
    Ok(csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(file))
}

fn csv_reader(path: &Path) -> Result<csv::Reader<fs::File>, MetricsError> {
    let file =
        fs::File::open(path).map_err(|e| MetricsError::io(format!("open {}", path.display()), e))?;
    Ok(csv::ReaderBuilder::new().from_reader(file))
}

/// Writes `store` under `dir`; the manifest is written last.
pub fn write_store(store: &RawStore, dir: &Path) -> Result<(), MetricsError> {
    fs::create_dir_all(dir).map_err(|e| MetricsError::io(format!("create {}", dir.display()), e))?;
    let mut entries = Vec::with_capacity(store.groups.len());
    for group in store.groups.values() {
        let q = &group.query;
        let (status, error, file) = match &group.status {
            QueryStatus::Ok => {
                let file = format!("{}.csv", q.name);
                write_series_csv(&group.series, &dir.join(&file))?;
                ("ok".to_string(), None, Some(file))
            }
            QueryStatus::Failed(e) => ("failed".to_string(), Some(e.clone()), None),
        };
        entries.push(ManifestEntry {
            name: q.name.clone(),
            promql: q.promql.clone(),
            step_seconds: q.step_seconds,
            kind: q.kind,
            status,
            error,
            series: group.series.len(),
            file,
        });
    }
    let manifest = Manifest {
        format: FORMAT.into(),
        window: store.window,
        queries: entries,
    };
    let path = dir.join(MANIFEST_FILE);
    fs::write(&path, serde_yaml::to_string(&manifest)?)
        .map_err(|e| MetricsError::io(format!("write {}", path.display()), e))
}

fn write_series_csv(series: &[MetricSeries], path: &Path) -> Result<(), MetricsError> {
    let with_name = series.iter().any(|s| !s.metric_name.is_empty());
    let keys: BTreeSet<&str> = series
        .iter()
        .flat_map(|s| s.labels.keys().map(String::as_str))
        .collect();
    let mut w = csv_writer(path)?;
    let mut header = vec!["timestamp"];
    if with_name {
        header.push(NAME_COLUMN);
    }
    header.extend(keys.iter().copied());
    header.push("value");
    w.write_record(&header)?;
    for s in series {
        for sample in s.samples() {
            let mut row = Vec::with_capacity(header.len());
            row.push(sample.timestamp.to_decimal_secs());
            if with_name {
                row.push(s.metric_name.clone());
            }
            for k in &keys {
                row.push(s.labels.get(*k).cloned().unwrap_or_default());
            }
            row.push(sample.value.to_string());
            w.write_record(&row)?;
        }
    }
    w.flush().map_err(|e| MetricsError::io(format!("flush {}", path.display()), e))
}

struct ParsedSeries {
    name: String,
    labels: BTreeMap<String, String>,
    samples: Vec<MetricSample>,
    first_line: u64,
}

/// Reads rows grouped by label set, in first-appearance order. `ts_col` and
/// `value_col` index into the header; every other column is a label.
fn read_series_csv(
    path: &Path,
    kind: MetricKind,
    columns: impl Fn(&csv::StringRecord) -> Result<(usize, usize), String>,
) -> Result<Vec<MetricSeries>, MetricsError> {
    let file_name = path.display().to_string();
    let malformed = |line: u64, reason: String| MetricsError::Malformed {
        file: file_name.clone(),
        line,
        reason,
    };
    let mut reader = csv_reader(path)?;
    let header = reader.headers()?.clone();
    let (ts_col, value_col) = columns(&header).map_err(|r| malformed(1, r))?;
    let mut index: BTreeMap<(String, BTreeMap<String, String>), usize> = BTreeMap::new();
    let mut parsed: Vec<ParsedSeries> = Vec::new();
    for record in reader.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != header.len() {
            return Err(malformed(line, format!("expected {} fields, found {}", header.len(), record.len())));
        }
        let timestamp = Timestamp::parse_decimal_secs(&record[ts_col])
            .map_err(|e| malformed(line, e.to_string()))?;
        let value: f64 = record[value_col]
            .parse()
            .map_err(|_| malformed(line, format!("value `{}` is not a number", &record[value_col])))?;
        let mut name = String::new();
        let mut labels = BTreeMap::new();
        for (i, (col, cell)) in header.iter().zip(record.iter()).enumerate() {
            if i == ts_col || i == value_col || cell.is_empty() {
                continue;
            }
            if col == NAME_COLUMN {
                name = cell.to_string();
            } else {
                labels.insert(col.to_string(), cell.to_string());
            }
        }
        let key = (name.clone(), labels.clone());
        let idx = *index.entry(key).or_insert_with(|| {
            parsed.push(ParsedSeries {
                name,
                labels,
                samples: Vec::new(),
                first_line: line,
            });
            parsed.len() - 1
        });
        parsed[idx].samples.push(MetricSample::new(timestamp, value));
    }
    parsed
        .into_iter()
        .map(|p| {
            MetricSeries::new(p.name, p.labels, kind, p.samples)
                .map_err(|e| malformed(p.first_line, e.to_string()))
        })
        .collect()
}

/// Reads a store written by [`write_store`].
pub fn read_snapshot_store(dir: &Path) -> Result<RawStore, MetricsError> {
    let manifest_path = dir.join(MANIFEST_FILE);
    if !manifest_path.is_file() {
        return Err(MetricsError::MissingManifest(manifest_path.display().to_string()));
    }
    let text = fs::read_to_string(&manifest_path)
        .map_err(|e| MetricsError::io(format!("read {}", manifest_path.display()), e))?;
    let manifest: Manifest = serde_yaml::from_str(&text).map_err(|e| MetricsError::Malformed {
        file: manifest_path.display().to_string(),
        line: e.location().map_or(0, |l| l.line() as u64),
        reason: e.to_string(),
    })?;
    let bad_manifest = |reason: String| MetricsError::Malformed {
        file: manifest_path.display().to_string(),
        line: 0,
        reason,
    };
    if manifest.format != FORMAT {
        return Err(bad_manifest(format!("unsupported format `{}`", manifest.format)));
    }
    let mut store = RawStore::new(manifest.window);
    for entry in manifest.queries {
        let query = ResponseQuery {
            name: entry.name,
            promql: entry.promql,
            step_seconds: entry.step_seconds,
            kind: entry.kind,
        };
        query.validate()?;
        let group = match entry.status.as_str() {
            "ok" => {
                let file = entry
                    .file
                    .ok_or_else(|| bad_manifest(format!("query `{}` has no file", query.name)))?;
                let series = read_series_csv(&dir.join(&file), query.kind, |header| {
                    let n = header.len();
                    if n < 2 || &header[0] != "timestamp" || &header[n - 1] != "value" {
                        return Err("header must be timestamp,<labels...>,value".into());
                    }
                    Ok((0, n - 1))
                })?;
                if series.len() != entry.series {
                    return Err(bad_manifest(format!(
                        "query `{}` lists {} series but {file} holds {}",
                        query.name,
                        entry.series,
                        series.len()
                    )));
                }
                QueryGroup::ok(query, series)
            }
            "failed" => QueryGroup::failed(query, entry.error.unwrap_or_default()),
            other => return Err(bad_manifest(format!("unknown status `{other}`"))),
        };
        store.insert(group);
    }
    Ok(store)
}

pub const ABSOLUTE_MARKER: &str = "_all_absolute_";

/// Best-effort ingest of a directory of per-metric CSVs named
/// `<group>_all_absolute_<unit>.csv` (the processed-data layout).
///
/// A column named `timestamp`, `time` or `ts` holds the sample time; the
/// column `value` (or else the last column) holds the counter value; all other
/// columns are labels. The window spans the earliest to latest sample.
pub fn read_replication_dir(dir: &Path) -> Result<RawStore, MetricsError> {
    let mut files: Vec<(String, PathBuf)> = Vec::new();
    let entries =
        fs::read_dir(dir).map_err(|e| MetricsError::io(format!("read {}", dir.display()), e))?;
    for entry in entries {
        let entry = entry.map_err(|e| MetricsError::io(format!("read {}", dir.display()), e))?;
        let file_name = entry.file_name().to_string_lossy().to_string();
        let Some(stem) = file_name.strip_suffix(".csv") else {
            continue;
        };
        if let Some((group, _unit)) = stem.split_once(ABSOLUTE_MARKER) {
            files.push((group.to_string(), entry.path()));
        }
    }
    files.sort();
    if files.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    let mut groups = Vec::new();
    let (mut min_ts, mut max_ts) = (None::<Timestamp>, None::<Timestamp>);
    for (group, path) in files {
        let series = read_series_csv(&path, MetricKind::Counter, |header| {
            let ts = header
                .iter()
                .position(|c| matches!(c, "timestamp" | "time" | "ts"))
                .ok_or("no timestamp column")?;
            let value = header
                .iter()
                .position(|c| c == "value")
                .unwrap_or(header.len().saturating_sub(1));
            if value == ts {
                return Err("no value column".into());
            }
            Ok((ts, value))
        })?;
        for s in &series {
            for x in s.samples() {
                min_ts = Some(min_ts.map_or(x.timestamp, |m| m.min(x.timestamp)));
                max_ts = Some(max_ts.map_or(x.timestamp, |m| m.max(x.timestamp)));
            }
        }
        let step = series
            .iter()
            .flat_map(|s| s.samples().windows(2).map(|w| w[1].timestamp.millis() - w[0].timestamp.millis()))
            .min()
            .unwrap_or(1000);
        let query = ResponseQuery::new(
            &group,
            &format!("file:{}", path.file_name().unwrap_or_default().to_string_lossy()),
            step as f64 / 1000.0,
            MetricKind::Counter,
        );
        groups.push(QueryGroup::ok(query, series));
    }
    let (Some(start), Some(end)) = (min_ts, max_ts) else {
        return Err(MetricsError::EmptyInput);
    };
    let end = if end > start { end } else { start.add_millis(1) };
    let mut store = RawStore::new(TimeWindow::new(start, end)?);
    for g in groups {
        store.insert(g);
    }
    Ok(store)
}

pub fn snapshot_file_name(taken_at: Timestamp) -> String {
    format!("snapshot_{}.csv", taken_at.millis().div_euclid(1000))
}

/// Writes `snapshot` as `<dir>/snapshot_<epoch>.csv` and returns the path.
pub fn write_storage_snapshot(snapshot: &StorageSnapshot, dir: &Path) -> Result<PathBuf, MetricsError> {
    fs::create_dir_all(dir).map_err(|e| MetricsError::io(format!("create {}", dir.display()), e))?;
    let path = dir.join(snapshot_file_name(snapshot.taken_at));
    let mut w = csv_writer(&path)?;
    w.write_record(["container_id", "bytes_used"])?;
    for (id, bytes) in &snapshot.rows {
        w.write_record([id.as_str(), &bytes.to_string()])?;
    }
    w.flush().map_err(|e| MetricsError::io(format!("flush {}", path.display()), e))?;
    Ok(path)
}

pub fn read_storage_snapshot(path: &Path) -> Result<StorageSnapshot, MetricsError> {
    let file_name = path.display().to_string();
    let malformed = |line: u64, reason: String| MetricsError::Malformed {
        file: file_name.clone(),
        line,
        reason,
    };
    let epoch: i64 = path
        .file_stem()
        .and_then(|s| s.to_str())
        .and_then(|s| s.strip_prefix("snapshot_"))
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| malformed(0, "file name must be snapshot_<epoch>.csv".into()))?;
    let mut reader = csv_reader(path)?;
    let header = reader.headers()?.clone();
    if header.iter().collect::<Vec<_>>() != ["container_id", "bytes_used"] {
        return Err(malformed(1, "header must be container_id,bytes_used".into()));
    }
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        let bytes: u64 = record[1]
            .parse()
            .map_err(|_| malformed(line, format!("bytes_used `{}` is not a count", &record[1])))?;
        rows.push((record[0].to_string(), bytes));
    }
    StorageSnapshot::from_rows(Timestamp::from_secs(epoch), rows)
}
