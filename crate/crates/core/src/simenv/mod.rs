//! Synthetic microservice environment.
//!
//! A topology of services accrues joules and bytes per request and per
//! second of idle time. Counters are sampled at every multiple of the scrape
//! interval and served through the same query interface a live deployment
//! offers. An exact integer ledger of everything accrued is kept alongside.
//!
//! Time starts at 0 and moves only through explicit advances unless the
//! simulator is served on a wall clock.

mod environment;
mod serve;
mod sim;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::time::Timestamp;

pub use environment::{SimClock, SimEnvironment};
pub use serve::{serve_http, ServeClock, SimServer, ACTION_PATH};
pub use sim::{ContainerLedger, Selector, ServiceLedgerRow, Sim, SimResponse};

pub const COMPUTE_METRIC: &str = "kepler_container_joules_total";
pub const NETWORK_METRIC: &str = "container_network_receive_bytes_total";
pub const STORAGE_METRIC: &str = "container_fs_writes_bytes_total";
pub const NAMESPACE: &str = "sim";

/// The topology shipped with the engine.
pub const DEFAULT_TOPOLOGY_YAML: &str = include_str!("../../config/topology.yaml");

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("invalid topology: {0}")]
    Topology(String),
    #[error("invalid settings: {0}")]
    Settings(String),
    #[error("clock advance must be positive")]
    ZeroAdvance,
    #[error("{at} is beyond simulated time {now}")]
    BeyondSimTime { at: Timestamp, now: Timestamp },
    #[error("unsupported selector `{0}`")]
    Selector(String),
    #[error("{0}")]
    Action(String),
    #[error("cannot serve: {0}")]
    Bind(String),
    #[error("cannot read topology: {0}")]
    Read(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RequestCost {
    pub compute_joules: f64,
    pub rx_bytes: u64,
    pub fs_write_bytes: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SpanCost {
    pub rx_bytes_at_sink: u64,
    pub fs_write_bytes_at_backend: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IdleCost {
    pub joules_per_s: f64,
    pub rx_bytes_per_s: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServiceNode {
    pub name: String,
    #[serde(default = "one")]
    pub containers_per_service: u32,
    #[serde(default)]
    pub per_request: RequestCost,
    /// Cost of one span emitted by this service.
    #[serde(default)]
    pub per_span: SpanCost,
    #[serde(default)]
    pub idle: IdleCost,
    /// Fixed time added to a request's latency per visit.
    #[serde(default)]
    pub service_time_ms: u64,
}

fn one() -> u32 {
    1
}

impl ServiceNode {
    pub fn new(name: &str) -> Self {
        ServiceNode {
            name: name.to_string(),
            containers_per_service: 1,
            per_request: RequestCost::default(),
            per_span: SpanCost::default(),
            idle: IdleCost::default(),
            service_time_ms: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Edge {
    pub from: String,
    pub to: String,
    /// Calls per visit of `from`.
    #[serde(default = "one")]
    pub calls: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimRoute {
    pub path: String,
    /// Entry service.
    pub service: String,
}

/// Traffic caused by one scrape, per scraped container.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScrapeCost {
    pub sink_rx_bytes_per_target: u64,
    pub backend_fs_write_bytes_per_target: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MeshCost {
    pub compute_joules: f64,
    pub rx_bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimSettings {
    pub trace_sampling_fraction: f64,
    pub scrape_interval_s: f64,
    pub mesh_enabled: bool,
    /// Added to every visited service while the mesh is enabled.
    pub mesh_per_request: MeshCost,
    pub seed: u64,
}

impl Default for SimSettings {
    fn default() -> Self {
        SimSettings {
            trace_sampling_fraction: 0.01,
            scrape_interval_s: 60.0,
            mesh_enabled: false,
            mesh_per_request: MeshCost {
                compute_joules: 0.004,
                rx_bytes: 600,
            },
            seed: 0,
        }
    }
}

fn nonnegative(what: &str, v: f64) -> Result<(), String> {
    if v.is_finite() && v >= 0.0 {
        Ok(())
    } else {
        Err(format!("{what} must be finite and nonnegative, got {v}"))
    }
}

impl SimSettings {
    pub fn validate(&self) -> Result<(), SimError> {
        let f = self.trace_sampling_fraction;
        if !(0.0..=1.0).contains(&f) {
            return Err(SimError::Settings(format!("trace_sampling_fraction {f} outside [0, 1]")));
        }
        let s = self.scrape_interval_s;
        if !(s.is_finite() && s >= 0.001) {
            return Err(SimError::Settings(format!("scrape_interval_s must be at least 1 ms, got {s}")));
        }
        nonnegative("mesh_per_request.compute_joules", self.mesh_per_request.compute_joules)
            .map_err(SimError::Settings)
    }

    pub(crate) fn scrape_interval_ms(&self) -> i64 {
        ((self.scrape_interval_s * 1000.0).round() as i64).max(1)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TopologySpec {
    pub services: Vec<ServiceNode>,
    #[serde(default)]
    pub edges: Vec<Edge>,
    #[serde(default)]
    pub routes: Vec<SimRoute>,
    pub telemetry_sink: String,
    pub storage_backend: String,
    #[serde(default)]
    pub scrape_cost: ScrapeCost,
    /// Settings in force after a clean.
    #[serde(default)]
    pub settings: SimSettings,
}

/// Upper bound on service visits per request.
const MAX_VISITS: u64 = 100_000;

impl TopologySpec {
    pub fn shipped_default() -> Self {
        Self::from_yaml(DEFAULT_TOPOLOGY_YAML).expect("shipped topology is valid")
    }

    pub fn from_yaml(text: &str) -> Result<Self, SimError> {
        let t: TopologySpec = serde_yaml::from_str(text).map_err(|e| SimError::Read(e.to_string()))?;
        t.validate()?;
        Ok(t)
    }

    pub fn from_file(path: &std::path::Path) -> Result<Self, SimError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| SimError::Read(format!("{}: {e}", path.display())))?;
        Self::from_yaml(&text).map_err(|e| match e {
            SimError::Read(m) => SimError::Read(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn service_index(&self, name: &str) -> Option<usize> {
        self.services.iter().position(|s| s.name == name)
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: String| Err(SimError::Topology(m));
        if self.routes.is_empty() {
            return bad("no routes, so no entry service".into());
        }
        let mut names = BTreeSet::new();
        for s in &self.services {
            if s.name.is_empty() || s.name.contains(['/', '"', '{', '}', ',']) || s.name.contains(char::is_whitespace) {
                return bad(format!("bad service name `{}`", s.name));
            }
            if !names.insert(s.name.as_str()) {
                return bad(format!("duplicate service `{}`", s.name));
            }
            if s.containers_per_service == 0 {
                return bad(format!("`{}` needs at least one container", s.name));
            }
            nonnegative(&format!("{}.per_request.compute_joules", s.name), s.per_request.compute_joules)
                .and_then(|_| nonnegative(&format!("{}.idle.joules_per_s", s.name), s.idle.joules_per_s))
                .map_err(SimError::Topology)?;
        }
        for (role, name) in [("telemetry_sink", &self.telemetry_sink), ("storage_backend", &self.storage_backend)] {
            if !names.contains(name.as_str()) {
                return bad(format!("{role} `{name}` is not a service"));
            }
        }
        for e in &self.edges {
            for end in [&e.from, &e.to] {
                if !names.contains(end.as_str()) {
                    return bad(format!("edge {} -> {} names unknown service `{end}`", e.from, e.to));
                }
            }
            if e.calls == 0 {
                return bad(format!("edge {} -> {} has zero calls", e.from, e.to));
            }
        }
        let mut paths = BTreeSet::new();
        for r in &self.routes {
            if !r.path.starts_with('/') || r.path.starts_with("/api/") || r.path.starts_with("/-/") {
                return bad(format!("route path `{}` is not usable", r.path));
            }
            if !paths.insert(r.path.as_str()) {
                return bad(format!("duplicate route `{}`", r.path));
            }
            if !names.contains(r.service.as_str()) {
                return bad(format!("route `{}` enters unknown service `{}`", r.path, r.service));
            }
        }
        self.settings.validate()?;

        let order = self.topological_order()?;
        // visits per service, accumulated callers first
        let mut visits: BTreeMap<&str, u64> = BTreeMap::new();
        for r in &self.routes {
            visits.clear();
            visits.insert(r.service.as_str(), 1);
            for &i in &order {
                let name = self.services[i].name.as_str();
                let n = visits.get(name).copied().unwrap_or(0);
                if n == 0 {
                    continue;
                }
                for e in self.edges.iter().filter(|e| e.from == name) {
                    let add = n.saturating_mul(u64::from(e.calls));
                    let slot = visits.entry(e.to.as_str()).or_default();
                    *slot = slot.saturating_add(add);
                }
            }
            let total: u64 = visits.values().fold(0u64, |a, &b| a.saturating_add(b));
            if total > MAX_VISITS {
                return bad(format!("route `{}` visits more than {MAX_VISITS} services", r.path));
            }
        }
        Ok(())
    }

    /// Kahn's algorithm; an error names a service on a cycle.
    fn topological_order(&self) -> Result<Vec<usize>, SimError> {
        let n = self.services.len();
        let idx = |name: &str| self.service_index(name).expect("validated edge");
        let mut indegree = vec![0usize; n];
        for e in &self.edges {
            indegree[idx(&e.to)] += 1;
        }
        let mut ready: Vec<usize> = (0..n).filter(|&i| indegree[i] == 0).rev().collect();
        let mut order = Vec::with_capacity(n);
        while let Some(i) = ready.pop() {
            order.push(i);
            for e in self.edges.iter().filter(|e| e.from == self.services[i].name) {
                let j = idx(&e.to);
                indegree[j] -= 1;
                if indegree[j] == 0 {
                    ready.push(j);
                }
            }
        }
        if order.len() < n {
            let on_cycle = (0..n).find(|&i| indegree[i] > 0).expect("some node left");
            return Err(SimError::Topology(format!(
                "call graph has a cycle through `{}`",
                self.services[on_cycle].name
            )));
        }
        Ok(order)
    }
}
