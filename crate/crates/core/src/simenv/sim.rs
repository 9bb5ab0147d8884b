//! The simulator state machine.
//!
//! Accruals are integers: nanojoules and bytes. Idle accrual is a function
//! of absolute simulated time, so the ledger at any instant is exact and
//! independent of how the clock was advanced. Exported joule counters are
//! `nanojoules / 1e9` as `f64`.
//!
//! The ledger value at `t` counts request and scrape effects at instants
//! strictly before `t` plus idle accrual up to `t`. A scrape at `t` records
//! exactly that value.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::sync::{Arc, Mutex, MutexGuard};
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{
    SimError, SimSettings, TopologySpec, COMPUTE_METRIC, NAMESPACE, NETWORK_METRIC, STORAGE_METRIC,
};
use crate::env::{actions, Action, ActionOutput};
use crate::metrics::{
    CollectError, MetricKind, MetricSample, MetricSeries, MetricSource, ResponseQuery, StorageSnapshot,
};
use crate::model::{aggregate_services, ContainerUsage, EnergyIntensityFactors, Joules, ServiceEnergyBreakdown};
use crate::time::{TimeWindow, Timestamp};
use crate::treatments::{settings, SCRAPE_INTERVAL, SERVICE_MESH, TRACE_SAMPLING};

const NJ_PER_J: f64 = 1e9;

fn to_nanojoules(j: f64) -> u64 {
    (j * NJ_PER_J).round() as u64
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
struct Acc {
    compute_nj: u64,
    rx: u64,
    fs: u64,
}

#[derive(Debug)]
struct ServiceRt {
    compute_nj: u64,
    rx: u64,
    fs: u64,
    span_rx: u64,
    span_fs: u64,
    idle_nj_per_s: u64,
    idle_rx_per_s: u64,
    service_time_ms: u64,
    containers: Vec<usize>,
}

#[derive(Debug)]
struct ContainerRt {
    service: usize,
    pod: String,
    name: String,
}

impl ContainerRt {
    fn id(&self) -> String {
        format!("{NAMESPACE}/{}/{}", self.pod, self.name)
    }
}

/// Exported counter values of one container: joules, rx bytes, fs bytes.
type Exported = [f64; 3];

#[derive(Debug)]
struct Scrape {
    t_ms: i64,
    values: Vec<Exported>,
}

#[derive(Debug)]
struct State {
    topology: TopologySpec,
    baseline: SimSettings,
    settings: SimSettings,
    services: Vec<ServiceRt>,
    containers: Vec<ContainerRt>,
    /// Route path to visited service indices, in walk order.
    routes: BTreeMap<String, Vec<usize>>,
    sink: usize,
    backend: usize,
    acc: Vec<Acc>,
    /// State after all effects at each instant left behind.
    history: Vec<(i64, Vec<Acc>)>,
    dirty: bool,
    now_ms: i64,
    epoch_offset_ms: i64,
    wall_clock: bool,
    scrapes: Vec<Scrape>,
    reset_base: Vec<Exported>,
    rng: ChaCha8Rng,
    round_robin: Vec<usize>,
    mutations: Vec<String>,
    requests: u64,
}

/// Per-container ledger totals.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ContainerLedger {
    pub container_id: String,
    pub pod: String,
    pub service: String,
    pub compute_nanojoules: u64,
    pub rx_bytes: u64,
    pub fs_write_bytes: u64,
}

impl ContainerLedger {
    pub fn compute_joules(&self) -> Joules {
        nanojoules(self.compute_nanojoules)
    }

    /// The value the joule counter exports for this total.
    pub fn exported_joules(&self) -> f64 {
        self.compute_nanojoules as f64 / NJ_PER_J
    }
}

/// Per-service ledger totals.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ServiceLedgerRow {
    pub service: String,
    pub compute_nanojoules: u64,
    pub rx_bytes: u64,
    pub fs_write_bytes: u64,
}

impl ServiceLedgerRow {
    pub fn compute_joules(&self) -> Joules {
        nanojoules(self.compute_nanojoules)
    }
}

fn nanojoules(nj: u64) -> Joules {
    Joules::from_attojoules(u128::from(nj) * 1_000_000_000)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SimResponse {
    /// 200, or 404 for an unknown route.
    pub status: u16,
    pub latency: Duration,
    pub spans: u32,
}

fn walk(topology: &TopologySpec, entry: usize, out: &mut Vec<usize>) {
    out.push(entry);
    let name = &topology.services[entry].name;
    for e in topology.edges.iter().filter(|e| &e.from == name) {
        let to = topology.service_index(&e.to).expect("validated edge");
        for _ in 0..e.calls {
            walk(topology, to, out);
        }
    }
}

impl State {
    fn new(topology: TopologySpec, settings: SimSettings) -> Result<Self, SimError> {
        topology.validate()?;
        settings.validate()?;
        let mut services = Vec::with_capacity(topology.services.len());
        let mut containers = Vec::new();
        for (i, s) in topology.services.iter().enumerate() {
            let mut ids = Vec::new();
            for k in 0..s.containers_per_service {
                ids.push(containers.len());
                containers.push(ContainerRt {
                    service: i,
                    pod: format!("{}-{k}", s.name),
                    name: s.name.clone(),
                });
            }
            services.push(ServiceRt {
                compute_nj: to_nanojoules(s.per_request.compute_joules),
                rx: s.per_request.rx_bytes,
                fs: s.per_request.fs_write_bytes,
                span_rx: s.per_span.rx_bytes_at_sink,
                span_fs: s.per_span.fs_write_bytes_at_backend,
                idle_nj_per_s: to_nanojoules(s.idle.joules_per_s),
                idle_rx_per_s: s.idle.rx_bytes_per_s,
                service_time_ms: s.service_time_ms,
                containers: ids,
            });
        }
        let mut routes = BTreeMap::new();
        for r in &topology.routes {
            let mut visits = Vec::new();
            walk(&topology, topology.service_index(&r.service).expect("validated route"), &mut visits);
            routes.insert(r.path.clone(), visits);
        }
        let n = containers.len();
        let mut state = State {
            sink: topology.service_index(&topology.telemetry_sink).expect("validated sink"),
            backend: topology.service_index(&topology.storage_backend).expect("validated backend"),
            round_robin: vec![0; services.len()],
            rng: ChaCha8Rng::seed_from_u64(settings.seed),
            topology,
            baseline: settings.clone(),
            settings,
            services,
            containers,
            routes,
            acc: vec![Acc::default(); n],
            history: Vec::new(),
            dirty: false,
            now_ms: 0,
            epoch_offset_ms: 0,
            wall_clock: false,
            scrapes: Vec::new(),
            reset_base: vec![[0.0; 3]; n],
            mutations: Vec::new(),
            requests: 0,
        };
        state.scrape(0);
        Ok(state)
    }

    fn idle(&self, c: usize, t_ms: i64) -> (u64, u64) {
        let s = &self.services[self.containers[c].service];
        let t = u128::try_from(t_ms.max(0)).expect("nonnegative");
        let nj = u128::from(s.idle_nj_per_s) * t / 1000;
        let rx = u128::from(s.idle_rx_per_s) * t / 1000;
        (nj as u64, rx as u64)
    }

    fn with_idle(&self, acc: &[Acc], t_ms: i64) -> Vec<Acc> {
        acc.iter()
            .enumerate()
            .map(|(c, a)| {
                let (nj, rx) = self.idle(c, t_ms);
                Acc {
                    compute_nj: a.compute_nj + nj,
                    rx: a.rx + rx,
                    fs: a.fs,
                }
            })
            .collect()
    }

    /// Ledger just before any effect at `t_ms`.
    fn ledger_at(&self, t_ms: i64) -> Vec<Acc> {
        let idx = self.history.partition_point(|(c, _)| *c < t_ms);
        let zero = vec![Acc::default(); self.containers.len()];
        let base = if idx == 0 { &zero } else { &self.history[idx - 1].1 };
        self.with_idle(base, t_ms)
    }

    fn exported(&self, acc: &[Acc]) -> Vec<Exported> {
        acc.iter()
            .zip(&self.reset_base)
            .map(|(a, base)| {
                [
                    a.compute_nj as f64 / NJ_PER_J - base[0],
                    a.rx as f64 - base[1],
                    a.fs as f64 - base[2],
                ]
            })
            .collect()
    }

    fn push_history(&mut self, t_ms: i64) {
        if self.dirty {
            self.history.push((t_ms, self.acc.clone()));
            self.dirty = false;
        }
    }

    /// Samples every counter, then accounts for the scrape's own traffic.
    fn scrape(&mut self, t_ms: i64) {
        let values = self.exported(&self.with_idle(&self.acc, t_ms));
        self.scrapes.push(Scrape { t_ms, values });
        let targets = self.containers.len() as u64;
        let cost = self.topology.scrape_cost;
        if cost.sink_rx_bytes_per_target > 0 {
            let c = self.pick(self.sink);
            self.acc[c].rx += cost.sink_rx_bytes_per_target * targets;
            self.dirty = true;
        }
        if cost.backend_fs_write_bytes_per_target > 0 {
            let c = self.pick(self.backend);
            self.acc[c].fs += cost.backend_fs_write_bytes_per_target * targets;
            self.dirty = true;
        }
    }

    fn advance_to(&mut self, t_ms: i64) {
        if t_ms <= self.now_ms {
            return;
        }
        self.push_history(self.now_ms);
        let iv = self.settings.scrape_interval_ms();
        let mut k = self.now_ms.div_euclid(iv) + 1;
        while k * iv <= t_ms {
            let s = k * iv;
            self.scrape(s);
            self.push_history(s);
            k += 1;
        }
        self.now_ms = t_ms;
    }

    /// Round-robin container of a service.
    fn pick(&mut self, service: usize) -> usize {
        let ids = &self.services[service].containers;
        let c = ids[self.round_robin[service] % ids.len()];
        self.round_robin[service] = self.round_robin[service].wrapping_add(1);
        c
    }

    fn handle_request(&mut self, path: &str) -> SimResponse {
        let Some(visits) = self.routes.get(path).cloned() else {
            return SimResponse {
                status: 404,
                latency: Duration::ZERO,
                spans: 0,
            };
        };
        let sampled = self.rng.random::<f64>() < self.settings.trace_sampling_fraction;
        let (mesh_nj, mesh_rx) = if self.settings.mesh_enabled {
            let m = self.settings.mesh_per_request;
            (to_nanojoules(m.compute_joules), m.rx_bytes)
        } else {
            (0, 0)
        };
        let mut latency_ms = 0;
        for &s in &visits {
            let c = self.pick(s);
            let rt = &self.services[s];
            let (nj, rx, fs, span_rx, span_fs) = (rt.compute_nj, rt.rx, rt.fs, rt.span_rx, rt.span_fs);
            latency_ms += rt.service_time_ms;
            let a = &mut self.acc[c];
            a.compute_nj += nj + mesh_nj;
            a.rx += rx + mesh_rx;
            a.fs += fs;
            if sampled {
                let sink = self.pick(self.sink);
                self.acc[sink].rx += span_rx;
                let backend = self.pick(self.backend);
                self.acc[backend].fs += span_fs;
            }
        }
        self.dirty = true;
        self.requests += 1;
        SimResponse {
            status: 200,
            latency: Duration::from_millis(latency_ms),
            spans: if sampled { visits.len() as u32 } else { 0 },
        }
    }

    fn to_sim_ms(&self, t: Timestamp) -> i64 {
        t.millis() - self.epoch_offset_ms
    }

    fn to_exposed(&self, t_ms: i64) -> Timestamp {
        Timestamp::from_millis(t_ms + self.epoch_offset_ms)
    }

    fn container_ledgers(&self, acc: &[Acc]) -> Vec<ContainerLedger> {
        self.containers
            .iter()
            .zip(acc)
            .map(|(c, a)| ContainerLedger {
                container_id: c.id(),
                pod: c.pod.clone(),
                service: self.topology.services[c.service].name.clone(),
                compute_nanojoules: a.compute_nj,
                rx_bytes: a.rx,
                fs_write_bytes: a.fs,
            })
            .collect()
    }

    fn labels(&self, c: usize, metric: usize) -> BTreeMap<String, String> {
        let rt = &self.containers[c];
        let keys: [&str; 3] = if metric == 0 {
            ["container_name", "pod_name", "container_namespace"]
        } else {
            ["container", "pod", "namespace"]
        };
        BTreeMap::from([
            (keys[0].to_string(), rt.name.clone()),
            (keys[1].to_string(), rt.pod.clone()),
            (keys[2].to_string(), NAMESPACE.to_string()),
        ])
    }

    fn set_setting(&mut self, name: &str, apply: impl FnOnce(&mut SimSettings)) -> Result<(), SimError> {
        let before = setting_value(&self.settings, name);
        let mut next = self.settings.clone();
        apply(&mut next);
        next.validate()?;
        let after = setting_value(&next, name);
        self.settings = next;
        self.mutations.push(format!("{name}: {before} -> {after}"));
        Ok(())
    }
}

fn setting_value(s: &SimSettings, name: &str) -> String {
    match name {
        settings::SCRAPE_INTERVAL_SECONDS => s.scrape_interval_s.to_string(),
        settings::TRACE_SAMPLING_PERCENT => {
            // drop binary noise from the fraction-to-percent conversion
            ((s.trace_sampling_fraction * 100.0 * 1e9).round() / 1e9).to_string()
        }
        settings::SERVICE_MESH_ENABLED => s.mesh_enabled.to_string(),
        _ => String::new(),
    }
}

fn parse_param<T: FromStr>(action: &Action, key: &str) -> Result<T, SimError> {
    let raw = action
        .get(key)
        .ok_or_else(|| SimError::Action(format!("`{action}` lacks `{key}`")))?;
    raw.parse()
        .map_err(|_| SimError::Action(format!("`{action}`: cannot parse `{key}={raw}`")))
}

/// A metric name with optional `label="value"` / `label!="value"` matchers.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Selector {
    pub metric: String,
    /// `(label, equal, value)`.
    pub matchers: Vec<(String, bool, String)>,
}

impl Selector {
    fn matches(&self, labels: &BTreeMap<String, String>) -> bool {
        self.matchers.iter().all(|(k, eq, v)| {
            let actual = labels.get(k).map_or("", String::as_str);
            (actual == v) == *eq
        })
    }
}

fn is_ident(s: &str) -> bool {
    let mut chars = s.chars();
    chars.next().is_some_and(|c| c.is_ascii_alphabetic() || c == '_' || c == ':')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_' || c == ':')
}

impl FromStr for Selector {
    type Err = SimError;

    fn from_str(text: &str) -> Result<Self, Self::Err> {
        let err = || SimError::Selector(text.to_string());
        let text_t = text.trim();
        let (metric, rest) = match text_t.find('{') {
            Some(i) => (text_t[..i].trim(), Some(&text_t[i + 1..])),
            None => (text_t, None),
        };
        if !is_ident(metric) {
            return Err(err());
        }
        let mut matchers = Vec::new();
        if let Some(rest) = rest {
            let mut s = rest.trim_start();
            loop {
                if let Some(after) = s.strip_prefix('}') {
                    if !after.trim().is_empty() {
                        return Err(err());
                    }
                    break;
                }
                let op_at = s.find(['=', '!']).ok_or_else(err)?;
                let label = s[..op_at].trim();
                if !is_ident(label) {
                    return Err(err());
                }
                s = &s[op_at..];
                let eq = if let Some(r) = s.strip_prefix("!=") {
                    s = r;
                    false
                } else if let Some(r) = s.strip_prefix('=') {
                    if r.starts_with('~') {
                        return Err(err());
                    }
                    s = r;
                    true
                } else {
                    return Err(err());
                };
                s = s.trim_start().strip_prefix('"').ok_or_else(err)?;
                let mut value = String::new();
                let mut chars = s.char_indices();
                let end = loop {
                    match chars.next() {
                        Some((_, '\\')) => value.push(chars.next().ok_or_else(err)?.1),
                        Some((i, '"')) => break i,
                        Some((_, c)) => value.push(c),
                        None => return Err(err()),
                    }
                };
                matchers.push((label.to_string(), eq, value));
                s = s[end + 1..].trim_start();
                if let Some(r) = s.strip_prefix(',') {
                    s = r.trim_start();
                }
            }
        }
        Ok(Selector {
            metric: metric.to_string(),
            matchers,
        })
    }
}

impl fmt::Display for Selector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.metric)?;
        if !self.matchers.is_empty() {
            let parts: Vec<String> = self
                .matchers
                .iter()
                .map(|(k, eq, v)| format!("{k}{}{v:?}", if *eq { "=" } else { "!=" }))
                .collect();
            write!(f, "{{{}}}", parts.join(","))?;
        }
        Ok(())
    }
}

/// Shared handle to one simulator; clones refer to the same state.
#[derive(Debug, Clone)]
pub struct Sim {
    state: Arc<Mutex<State>>,
}

impl Sim {
    /// Counters at zero, clock at zero, one scrape taken at zero.
    pub fn build(topology: TopologySpec, settings: SimSettings) -> Result<Sim, SimError> {
        Ok(Sim {
            state: Arc::new(Mutex::new(State::new(topology, settings)?)),
        })
    }

    /// Uses the topology's own settings.
    pub fn from_topology(topology: TopologySpec) -> Result<Sim, SimError> {
        let settings = topology.settings.clone();
        Self::build(topology, settings)
    }

    fn lock(&self) -> MutexGuard<'_, State> {
        // a panic mid-transition cannot leave integer state half-updated in a
        // way later readers could misinterpret, so poisoning is ignored
        self.state.lock().unwrap_or_else(|p| p.into_inner())
    }

    pub fn topology(&self) -> TopologySpec {
        self.lock().topology.clone()
    }

    pub fn settings(&self) -> SimSettings {
        self.lock().settings.clone()
    }

    pub fn now(&self) -> Timestamp {
        let s = self.lock();
        s.to_exposed(s.now_ms)
    }

    pub fn advance_clock(&self, dt: Duration) -> Result<(), SimError> {
        let ms = i64::try_from(dt.as_millis()).map_err(|_| SimError::ZeroAdvance)?;
        if ms <= 0 {
            return Err(SimError::ZeroAdvance);
        }
        let mut s = self.lock();
        let to = s.now_ms + ms;
        s.advance_to(to);
        Ok(())
    }

    /// Moves the clock forward to `t`; earlier instants are ignored.
    pub fn advance_to(&self, t: Timestamp) {
        let mut s = self.lock();
        let to = s.to_sim_ms(t);
        s.advance_to(to);
    }

    pub fn handle_request(&self, path: &str) -> SimResponse {
        self.lock().handle_request(path)
    }

    pub fn requests_handled(&self) -> u64 {
        self.lock().requests
    }

    pub fn scrape_times(&self) -> Vec<Timestamp> {
        let s = self.lock();
        s.scrapes.iter().map(|x| s.to_exposed(x.t_ms)).collect()
    }

    /// Settings changes made so far, one line each.
    pub fn mutation_log(&self) -> Vec<String> {
        self.lock().mutations.clone()
    }

    /// Restarts exported counters from zero for every container. Ledger
    /// totals are unaffected.
    pub fn inject_counter_reset(&self) {
        let mut s = self.lock();
        let totals = s.with_idle(&s.acc, s.now_ms);
        s.reset_base = totals
            .iter()
            .map(|a| [a.compute_nj as f64 / NJ_PER_J, a.rx as f64, a.fs as f64])
            .collect();
    }

    /// Per-container totals including every effect so far.
    pub fn container_ledger(&self) -> Vec<ContainerLedger> {
        let s = self.lock();
        let acc = s.with_idle(&s.acc, s.now_ms);
        s.container_ledgers(&acc)
    }

    /// Per-container totals just before any effect at `t`.
    pub fn container_ledger_at(&self, t: Timestamp) -> Result<Vec<ContainerLedger>, SimError> {
        let s = self.lock();
        let at = s.to_sim_ms(t);
        if at > s.now_ms {
            return Err(SimError::BeyondSimTime {
                at: t,
                now: s.to_exposed(s.now_ms),
            });
        }
        Ok(s.container_ledgers(&s.ledger_at(at)))
    }

    /// Per-service totals including every effect so far, sorted by service.
    pub fn ledger(&self) -> Vec<ServiceLedgerRow> {
        let mut rows: BTreeMap<String, ServiceLedgerRow> = BTreeMap::new();
        for c in self.container_ledger() {
            let row = rows.entry(c.service.clone()).or_insert_with(|| ServiceLedgerRow {
                service: c.service.clone(),
                compute_nanojoules: 0,
                rx_bytes: 0,
                fs_write_bytes: 0,
            });
            row.compute_nanojoules += c.compute_nanojoules;
            row.rx_bytes += c.rx_bytes;
            row.fs_write_bytes += c.fs_write_bytes;
        }
        rows.into_values().collect()
    }

    /// Exact per-container deltas over `window`, expressed the way the
    /// collection pipeline sees them: joules as the difference of exported
    /// counter values, bytes as integer differences.
    pub fn ledger_usages(&self, window: &TimeWindow) -> Result<Vec<ContainerUsage>, SimError> {
        let start = self.container_ledger_at(window.start())?;
        let end = self.container_ledger_at(window.end())?;
        Ok(start
            .into_iter()
            .zip(end)
            .map(|(a, b)| ContainerUsage {
                compute_joules: Joules::from_f64(b.exported_joules() - a.exported_joules())
                    .expect("ledger is monotone"),
                network_bytes: b.rx_bytes - a.rx_bytes,
                storage_bytes: b.fs_write_bytes - a.fs_write_bytes,
                container_id: b.container_id,
                pod: b.pod,
                service: b.service,
                window: *window,
            })
            .collect())
    }

    /// The energy model applied to exact ledger deltas.
    pub fn ledger_breakdowns(
        &self,
        window: &TimeWindow,
        factors: &EnergyIntensityFactors,
    ) -> Result<Vec<ServiceEnergyBreakdown>, SimError> {
        let usages = self.ledger_usages(window)?;
        aggregate_services(&usages, factors).map_err(|e| SimError::Action(e.to_string()))
    }

    /// Recorded scrape samples inside `window`, one series per container.
    pub fn query_range_sim(&self, selector: &str, window: &TimeWindow) -> Result<Vec<MetricSeries>, SimError> {
        let sel: Selector = selector.parse()?;
        let metric = match sel.metric.as_str() {
            COMPUTE_METRIC => 0,
            NETWORK_METRIC => 1,
            STORAGE_METRIC => 2,
            _ => return Ok(Vec::new()),
        };
        let s = self.lock();
        let lo = s.to_sim_ms(window.start());
        let hi = s.to_sim_ms(window.end());
        let first = s.scrapes.partition_point(|x| x.t_ms < lo);
        let last = s.scrapes.partition_point(|x| x.t_ms <= hi);
        let mut out = Vec::new();
        for c in 0..s.containers.len() {
            let labels = s.labels(c, metric);
            if !sel.matches(&labels) {
                continue;
            }
            let samples = s.scrapes[first..last]
                .iter()
                .map(|x| MetricSample::new(s.to_exposed(x.t_ms), x.values[c][metric]))
                .collect();
            let series = MetricSeries::new(&sel.metric, labels, MetricKind::Counter, samples)
                .map_err(|e| SimError::Action(e.to_string()))?;
            out.push(series);
        }
        out.sort_by(|a, b| a.labels.cmp(&b.labels));
        Ok(out)
    }

    /// Bytes written per container so far.
    pub fn storage_snapshot(&self) -> StorageSnapshot {
        let taken_at = self.now();
        let rows = self
            .container_ledger()
            .into_iter()
            .map(|c| (c.container_id, c.fs_write_bytes));
        StorageSnapshot::from_rows(taken_at, rows).expect("container ids are unique")
    }

    /// Rebuilds the simulator from its topology and baseline settings. On a
    /// wall clock only the settings are restored, since time cannot rewind.
    pub fn reset(&self) {
        let mut s = self.lock();
        if s.wall_clock {
            let baseline = s.baseline.clone();
            if s.settings != baseline {
                s.mutations.push("settings restored to baseline".into());
                s.settings = baseline;
            }
            return;
        }
        let fresh = State::new(s.topology.clone(), s.baseline.clone()).expect("validated at build");
        let mutations = std::mem::take(&mut s.mutations);
        *s = fresh;
        s.mutations = mutations;
    }

    /// Maps the current simulated instant to `now` so later wall-clock
    /// advances line up with epoch time.
    pub(crate) fn use_wall_clock(&self, now: Timestamp) {
        let mut s = self.lock();
        s.epoch_offset_ms = now.millis() - s.now_ms;
        s.wall_clock = true;
    }

    /// Interprets an action line: lifecycle hooks, `inspect`, the built-in
    /// treatment actions and `revert`.
    pub fn apply_action(&self, action: &Action) -> Result<ActionOutput, SimError> {
        match action.name() {
            actions::CLEAN => {
                self.reset();
                Ok(ActionOutput::default())
            }
            actions::SETUP => Ok(ActionOutput::default()),
            actions::SNAPSHOT_STORAGE => {
                let snap = self.storage_snapshot();
                Ok(ActionOutput {
                    values: snap.rows.into_iter().map(|(k, v)| (k, v.to_string())).collect(),
                })
            }
            actions::INSPECT => {
                let name: String = parse_param(action, "setting")?;
                let value = setting_value(&self.lock().settings, &name);
                if value.is_empty() {
                    return Err(SimError::Action(format!("unknown setting `{name}`")));
                }
                Ok(ActionOutput::with(&name, value))
            }
            SCRAPE_INTERVAL => {
                let seconds: f64 = parse_param(action, "seconds")?;
                self.lock()
                    .set_setting(settings::SCRAPE_INTERVAL_SECONDS, |s| s.scrape_interval_s = seconds)?;
                Ok(ActionOutput::default())
            }
            TRACE_SAMPLING => {
                let percent: f64 = parse_param(action, "percent")?;
                if !(0.0..=100.0).contains(&percent) {
                    return Err(SimError::Action(format!("percent {percent} outside [0, 100]")));
                }
                self.lock().set_setting(settings::TRACE_SAMPLING_PERCENT, |s| {
                    s.trace_sampling_fraction = percent / 100.0
                })?;
                Ok(ActionOutput::default())
            }
            SERVICE_MESH => {
                let enabled: bool = parse_param(action, "enabled")?;
                self.lock()
                    .set_setting(settings::SERVICE_MESH_ENABLED, |s| s.mesh_enabled = enabled)?;
                Ok(ActionOutput::default())
            }
            actions::REVERT => {
                let key: String = parse_param(action, "key")?;
                let mut s = self.lock();
                let b = s.baseline.clone();
                match key.as_str() {
                    SCRAPE_INTERVAL => s.set_setting(settings::SCRAPE_INTERVAL_SECONDS, |x| {
                        x.scrape_interval_s = b.scrape_interval_s
                    })?,
                    TRACE_SAMPLING => s.set_setting(settings::TRACE_SAMPLING_PERCENT, |x| {
                        x.trace_sampling_fraction = b.trace_sampling_fraction
                    })?,
                    SERVICE_MESH => s.set_setting(settings::SERVICE_MESH_ENABLED, |x| {
                        x.mesh_enabled = b.mesh_enabled
                    })?,
                    other => return Err(SimError::Action(format!("nothing to revert for `{other}`"))),
                }
                Ok(ActionOutput::default())
            }
            other => Err(SimError::Action(format!("unknown action `{other}`"))),
        }
    }
}

impl MetricSource for Sim {
    fn query_range(&self, query: &ResponseQuery, window: &TimeWindow) -> Result<Vec<MetricSeries>, CollectError> {
        self.query_range_sim(&query.promql, window)
            .map_err(|e| CollectError::Rejected(e.to_string()))
    }
}
