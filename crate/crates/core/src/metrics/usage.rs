//! Reduction of a raw store to per-container model inputs.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{container_identity, increase_over_window, MetricsError, RawStore};
use crate::model::{Component, ContainerUsage, Joules, ServiceMap};
use crate::time::TimeWindow;

pub const COMPUTE_GROUP: &str = "pods_kepler_joules";
pub const NETWORK_RECEIVED_GROUP: &str = "cadvisor_network_bytes_received";
pub const NETWORK_TRANSMITTED_GROUP: &str = "cadvisor_network_bytes_transmitted";
pub const STORAGE_GROUP: &str = "cadvisor_storage_usage_writes";

/// Which store groups feed each model component.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelInputs {
    pub compute: String,
    /// Summed; add the transmitted group to count both directions.
    pub network: Vec<String>,
    pub storage: String,
}

impl Default for ModelInputs {
    fn default() -> Self {
        ModelInputs {
            compute: COMPUTE_GROUP.into(),
            network: vec![NETWORK_RECEIVED_GROUP.into()],
            storage: STORAGE_GROUP.into(),
        }
    }
}

impl ModelInputs {
    pub fn groups(&self, c: Component) -> Vec<&str> {
        match c {
            Component::Compute => vec![self.compute.as_str()],
            Component::Network => self.network.iter().map(String::as_str).collect(),
            Component::Storage => vec![self.storage.as_str()],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub struct UsageWarning {
    pub container_id: String,
    pub component: Component,
    pub reason: String,
}

impl std::fmt::Display for UsageWarning {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {} {}", self.container_id, self.component, self.reason)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExtractedUsages {
    /// Sorted by container id.
    pub usages: Vec<ContainerUsage>,
    pub warnings: Vec<UsageWarning>,
}

impl ExtractedUsages {
    pub fn warnings_for<'a>(&'a self, container_id: &'a str) -> impl Iterator<Item = &'a UsageWarning> + 'a {
        self.warnings.iter().filter(move |w| w.container_id == container_id)
    }
}

#[derive(Default)]
struct Acc {
    pod: String,
    service: String,
    compute: f64,
    network: f64,
    storage: f64,
    seen: [bool; 3],
}

/// Per container: compute = increase of the joule counter, network and
/// storage = increase of the byte counters. A container missing a component
/// gets zero for it plus a warning.
pub fn usages_from_store(
    store: &RawStore,
    window: &TimeWindow,
    map: &ServiceMap,
    inputs: &ModelInputs,
) -> Result<ExtractedUsages, MetricsError> {
    let mut warnings = Vec::new();
    let mut containers: BTreeMap<String, Acc> = BTreeMap::new();
    let mut any_group = false;
    let mut missing_groups: Vec<(Component, String)> = Vec::new();

    for (slot, component) in Component::ALL.into_iter().enumerate() {
        for name in inputs.groups(component) {
            let group = match store.group(name) {
                Some(g) if g.status.is_ok() => g,
                Some(_) => {
                    missing_groups.push((component, format!("query `{name}` failed")));
                    continue;
                }
                None => {
                    missing_groups.push((component, format!("query `{name}` absent")));
                    continue;
                }
            };
            any_group = true;
            for series in &group.series {
                let Some((id, pod)) = container_identity(&series.labels) else {
                    warnings.push(UsageWarning {
                        container_id: series.to_string(),
                        component,
                        reason: "series without container labels skipped".into(),
                    });
                    continue;
                };
                let increase = increase_over_window(series, window)?;
                let acc = containers.entry(id).or_insert_with(|| Acc {
                    service: map.resolve(&series.labels, &pod),
                    pod,
                    ..Acc::default()
                });
                acc.seen[slot] = true;
                match component {
                    Component::Compute => acc.compute += increase,
                    Component::Network => acc.network += increase,
                    Component::Storage => acc.storage += increase,
                }
            }
        }
    }
    if !any_group || containers.is_empty() {
        return Err(MetricsError::EmptyInput);
    }

    let mut usages = Vec::with_capacity(containers.len());
    for (id, acc) in containers {
        for (slot, component) in Component::ALL.into_iter().enumerate() {
            if !acc.seen[slot] {
                let reason = missing_groups
                    .iter()
                    .find(|(c, _)| *c == component)
                    .map_or_else(|| "no series".to_string(), |(_, r)| format!("no series ({r})"));
                warnings.push(UsageWarning {
                    container_id: id.clone(),
                    component,
                    reason,
                });
            }
        }
        let compute_joules = Joules::from_f64(acc.compute)
            .map_err(|e| MetricsError::InvalidSeries(format!("{id}: {e}")))?;
        usages.push(ContainerUsage {
            container_id: id,
            pod: acc.pod,
            service: acc.service,
            compute_joules,
            network_bytes: to_bytes(acc.network),
            storage_bytes: to_bytes(acc.storage),
            window: *window,
        });
    }
    warnings.sort();
    Ok(ExtractedUsages { usages, warnings })
}

fn to_bytes(v: f64) -> u64 {
    if v.is_finite() && v > 0.0 {
        v.round() as u64
    } else {
        0
    }
}
