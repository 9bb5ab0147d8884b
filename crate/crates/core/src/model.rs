//! Component-level additive energy model.
//!
//! A container's energy over a window is the sum of three parts: the compute
//! energy reported by the node energy exporter, and network and storage
//! energy attributed from byte counts through intensity factors. Services
//! are the sum of their containers.
//!
//! Energies are carried as [`Joules`], an exact fixed-point quantity with
//! attojoule resolution, so that sums are associative and conservation holds
//! bit for bit regardless of how a container set is grouped.

use std::collections::BTreeMap;
use std::fmt;
use std::iter::Sum;
use std::ops::{Add, AddAssign};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::time::TimeWindow;

const JOULES_PER_KWH: f64 = 3.6e6;
const BYTES_PER_GB: f64 = 1e9;
const ATTO_PER_UNIT: u128 = 1_000_000_000_000_000_000;
const ATTO_DIGITS: i32 = 18;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("{what} must be finite and non-negative, got {value}")]
    Domain { what: &'static str, value: f64 },
    #[error("energy value {0} J is out of the representable range")]
    Overflow(f64),
    #[error("cannot parse energy `{0}`")]
    Parse(String),
    #[error("usages span different windows: {first} vs {other}")]
    MixedWindows { first: TimeWindow, other: TimeWindow },
    #[error("dominant component is undefined for service `{0}` with zero total energy")]
    UndefinedDominance(String),
}

/// Non-negative energy with attojoule resolution.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Joules(u128);

impl Joules {
    pub const ZERO: Joules = Joules(0);

    pub const fn from_attojoules(aj: u128) -> Self {
        Joules(aj)
    }

    pub const fn attojoules(self) -> u128 {
        self.0
    }

    pub const fn from_whole(j: u64) -> Self {
        Joules(j as u128 * ATTO_PER_UNIT)
    }

    /// Converts through the shortest decimal that round-trips `j`, then
    /// rounds half-to-even to the attojoule.
    pub fn from_f64(j: f64) -> Result<Self, ModelError> {
        if !j.is_finite() || j < 0.0 {
            return Err(ModelError::Domain {
                what: "energy",
                value: j,
            });
        }
        if j == 0.0 {
            return Ok(Joules::ZERO);
        }
        let repr = format!("{j:e}");
        let (mantissa, exp) = repr.split_once('e').expect("exponent form");
        let exp: i32 = exp.parse().expect("integer exponent");
        let (int, frac) = mantissa.split_once('.').unwrap_or((mantissa, ""));
        let digits: u128 = format!("{int}{frac}").parse().expect("decimal digits");
        let scale = exp - frac.len() as i32 + ATTO_DIGITS;
        if scale >= 0 {
            10u128
                .checked_pow(scale as u32)
                .and_then(|p| digits.checked_mul(p))
                .map(Joules)
                .ok_or(ModelError::Overflow(j))
        } else {
            let shift = (-scale) as u32;
            // digits < 10^17, so anything shifted by 38+ places rounds to zero
            if shift > 38 {
                return Ok(Joules::ZERO);
            }
            let div = 10u128.pow(shift);
            Ok(Joules(div_round_half_even(digits, div)))
        }
    }

    pub fn as_f64(self) -> f64 {
        let whole = (self.0 / ATTO_PER_UNIT) as f64;
        let frac = (self.0 % ATTO_PER_UNIT) as f64 / ATTO_PER_UNIT as f64;
        whole + frac
    }

    pub fn is_zero(self) -> bool {
        self.0 == 0
    }

    pub fn checked_mul(self, k: u128) -> Option<Self> {
        self.0.checked_mul(k).map(Joules)
    }
}

fn div_round_half_even(n: u128, d: u128) -> u128 {
    let q = n / d;
    let r = n % d;
    match (2 * r).cmp(&d) {
        std::cmp::Ordering::Less => q,
        std::cmp::Ordering::Greater => q + 1,
        std::cmp::Ordering::Equal => q + (q & 1),
    }
}

impl Add for Joules {
    type Output = Joules;
    fn add(self, rhs: Joules) -> Joules {
        Joules(self.0 + rhs.0)
    }
}

impl AddAssign for Joules {
    fn add_assign(&mut self, rhs: Joules) {
        self.0 += rhs.0;
    }
}

impl Sum for Joules {
    fn sum<I: Iterator<Item = Joules>>(iter: I) -> Joules {
        iter.fold(Joules::ZERO, Add::add)
    }
}

/// Exact decimal joules, trailing zeros trimmed: `216000`, `0.0036`.
impl fmt::Display for Joules {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let whole = self.0 / ATTO_PER_UNIT;
        let frac = self.0 % ATTO_PER_UNIT;
        if frac == 0 {
            write!(f, "{whole}")
        } else {
            let digits = format!("{frac:018}");
            write!(f, "{whole}.{}", digits.trim_end_matches('0'))
        }
    }
}

impl FromStr for Joules {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let t = s.trim();
        let err = || ModelError::Parse(s.to_string());
        if t.contains(['e', 'E']) {
            let v: f64 = t.parse().map_err(|_| err())?;
            return Joules::from_f64(v);
        }
        let (int, frac) = t.split_once('.').unwrap_or((t, ""));
        if (int.is_empty() && frac.is_empty())
            || !int.bytes().all(|b| b.is_ascii_digit())
            || !frac.bytes().all(|b| b.is_ascii_digit())
        {
            return Err(err());
        }
        if frac.len() > ATTO_DIGITS as usize {
            let v: f64 = t.parse().map_err(|_| err())?;
            return Joules::from_f64(v);
        }
        let whole: u128 = if int.is_empty() { 0 } else { int.parse().map_err(|_| err())? };
        let frac_val: u128 = if frac.is_empty() {
            0
        } else {
            let padded = format!("{frac:0<18}");
            padded.parse().map_err(|_| err())?
        };
        whole
            .checked_mul(ATTO_PER_UNIT)
            .and_then(|w| w.checked_add(frac_val))
            .map(Joules)
            .ok_or_else(err)
    }
}

impl Serialize for Joules {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Joules {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// kWh/GB to J/byte: `f × 3.6e6 / 1e9`.
pub fn kwh_per_gb_to_j_per_byte(kwh_per_gb: f64) -> Result<f64, ModelError> {
    if !kwh_per_gb.is_finite() || kwh_per_gb < 0.0 {
        return Err(ModelError::Domain {
            what: "intensity factor",
            value: kwh_per_gb,
        });
    }
    Ok(kwh_per_gb * JOULES_PER_KWH / BYTES_PER_GB)
}

/// Energy attributed to `bytes` at `j_per_byte`.
pub fn attributable_energy(bytes: u64, j_per_byte: f64) -> Result<Joules, ModelError> {
    let per_byte = Joules::from_f64(j_per_byte)?;
    Ok(scale_bytes(bytes, per_byte))
}

fn scale_bytes(bytes: u64, per_byte: Joules) -> Joules {
    per_byte
        .checked_mul(u128::from(bytes))
        .expect("bytes × J/byte exceeds 1.7e20 J")
}

/// Network and storage energy intensity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EnergyIntensityFactors {
    network_kwh_per_gb: f64,
    storage_kwh_per_gb: f64,
    network_j_per_byte: f64,
    storage_j_per_byte: f64,
    #[serde(skip)]
    network_per_byte: Joules,
    #[serde(skip)]
    storage_per_byte: Joules,
}

/// On-disk form of the factors file.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FactorsConfig {
    pub network_kwh_per_gb: f64,
    pub storage_kwh_per_gb: f64,
}

impl EnergyIntensityFactors {
    pub fn from_kwh_per_gb(network: f64, storage: f64) -> Result<Self, ModelError> {
        let network_j_per_byte = kwh_per_gb_to_j_per_byte(network)?;
        let storage_j_per_byte = kwh_per_gb_to_j_per_byte(storage)?;
        Ok(EnergyIntensityFactors {
            network_kwh_per_gb: network,
            storage_kwh_per_gb: storage,
            network_j_per_byte,
            storage_j_per_byte,
            network_per_byte: Joules::from_f64(network_j_per_byte)?,
            storage_per_byte: Joules::from_f64(storage_j_per_byte)?,
        })
    }

    pub fn network_kwh_per_gb(&self) -> f64 {
        self.network_kwh_per_gb
    }

    pub fn storage_kwh_per_gb(&self) -> f64 {
        self.storage_kwh_per_gb
    }

    pub fn network_j_per_byte(&self) -> f64 {
        self.network_j_per_byte
    }

    pub fn storage_j_per_byte(&self) -> f64 {
        self.storage_j_per_byte
    }

    pub fn network_energy(&self, bytes: u64) -> Joules {
        scale_bytes(bytes, self.network_per_byte)
    }

    pub fn storage_energy(&self, bytes: u64) -> Joules {
        scale_bytes(bytes, self.storage_per_byte)
    }
}

impl TryFrom<FactorsConfig> for EnergyIntensityFactors {
    type Error = ModelError;

    fn try_from(c: FactorsConfig) -> Result<Self, Self::Error> {
        Self::from_kwh_per_gb(c.network_kwh_per_gb, c.storage_kwh_per_gb)
    }
}

/// Window totals for one container.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContainerUsage {
    pub container_id: String,
    pub pod: String,
    pub service: String,
    pub compute_joules: Joules,
    pub network_bytes: u64,
    pub storage_bytes: u64,
    pub window: TimeWindow,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Component {
    Compute,
    Network,
    Storage,
}

impl Component {
    pub const ALL: [Component; 3] = [Component::Compute, Component::Network, Component::Storage];

    pub fn as_str(self) -> &'static str {
        match self {
            Component::Compute => "compute",
            Component::Network => "network",
            Component::Storage => "storage",
        }
    }
}

impl fmt::Display for Component {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Component {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "compute" => Ok(Component::Compute),
            "network" => Ok(Component::Network),
            "storage" => Ok(Component::Storage),
            other => Err(format!("unknown component `{other}`")),
        }
    }
}

/// Per-service energy split into its three components.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ServiceEnergyBreakdown {
    pub service: String,
    pub compute_joules: Joules,
    pub network_joules: Joules,
    pub storage_joules: Joules,
    pub total_joules: Joules,
    pub share_compute: f64,
    pub share_network: f64,
    pub share_storage: f64,
}

impl ServiceEnergyBreakdown {
    pub fn new(
        service: impl Into<String>,
        compute: Joules,
        network: Joules,
        storage: Joules,
    ) -> Self {
        let total = compute + network + storage;
        let (share_compute, share_network, share_storage) = if total.is_zero() {
            (0.0, 0.0, 0.0)
        } else {
            let t = total.as_f64();
            (compute.as_f64() / t, network.as_f64() / t, storage.as_f64() / t)
        };
        ServiceEnergyBreakdown {
            service: service.into(),
            compute_joules: compute,
            network_joules: network,
            storage_joules: storage,
            total_joules: total,
            share_compute,
            share_network,
            share_storage,
        }
    }

    pub fn component(&self, c: Component) -> Joules {
        match c {
            Component::Compute => self.compute_joules,
            Component::Network => self.network_joules,
            Component::Storage => self.storage_joules,
        }
    }

    pub fn share(&self, c: Component) -> f64 {
        match c {
            Component::Compute => self.share_compute,
            Component::Network => self.share_network,
            Component::Storage => self.share_storage,
        }
    }
}

pub fn container_breakdown(
    usage: &ContainerUsage,
    factors: &EnergyIntensityFactors,
) -> ServiceEnergyBreakdown {
    ServiceEnergyBreakdown::new(
        usage.service.clone(),
        usage.compute_joules,
        factors.network_energy(usage.network_bytes),
        factors.storage_energy(usage.storage_bytes),
    )
}

/// One breakdown per resolved service, sorted by service name.
pub fn aggregate_services(
    usages: &[ContainerUsage],
    factors: &EnergyIntensityFactors,
) -> Result<Vec<ServiceEnergyBreakdown>, ModelError> {
    if let Some(first) = usages.first() {
        if let Some(other) = usages.iter().find(|u| u.window != first.window) {
            return Err(ModelError::MixedWindows {
                first: first.window,
                other: other.window,
            });
        }
    }
    let mut by_service: BTreeMap<&str, [Joules; 3]> = BTreeMap::new();
    for u in usages {
        let b = container_breakdown(u, factors);
        let acc = by_service.entry(u.service.as_str()).or_default();
        acc[0] += b.compute_joules;
        acc[1] += b.network_joules;
        acc[2] += b.storage_joules;
    }
    Ok(by_service
        .into_iter()
        .map(|(service, [c, n, s])| ServiceEnergyBreakdown::new(service, c, n, s))
        .collect())
}

/// Percentage of the modelled total that a compute-only view misses.
pub fn compute_only_underestimation(b: &ServiceEnergyBreakdown) -> f64 {
    if b.total_joules.is_zero() {
        return 0.0;
    }
    let missed = b.network_joules + b.storage_joules;
    100.0 * missed.as_f64() / b.total_joules.as_f64()
}

/// Largest component; ties resolve compute, then network, then storage.
pub fn dominant_component(b: &ServiceEnergyBreakdown) -> Result<Component, ModelError> {
    if b.total_joules.is_zero() {
        return Err(ModelError::UndefinedDominance(b.service.clone()));
    }
    let mut best = Component::Compute;
    for c in [Component::Network, Component::Storage] {
        if b.component(c) > b.component(best) {
            best = c;
        }
    }
    Ok(best)
}

/// How series labels resolve to a service name.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "match", rename_all = "snake_case", deny_unknown_fields)]
pub enum ServiceRule {
    /// Matches when `key` is present (and equals `equals`, if given). Resolves
    /// to `service`, or to the label value when `service` is omitted.
    Label {
        key: String,
        #[serde(default)]
        equals: Option<String>,
        #[serde(default)]
        service: Option<String>,
    },
    PodPrefix { prefix: String, service: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Fallback {
    #[default]
    UsePodName,
    UnattributedBucket,
}

pub const UNATTRIBUTED: &str = "unattributed";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServiceMap {
    #[serde(default)]
    pub rules: Vec<ServiceRule>,
    #[serde(default)]
    pub fallback: Fallback,
}

impl Default for ServiceMap {
    fn default() -> Self {
        let label = |key: &str| ServiceRule::Label {
            key: key.to_string(),
            equals: None,
            service: None,
        };
        ServiceMap {
            rules: vec![label("service"), label("container"), label("container_name")],
            fallback: Fallback::UsePodName,
        }
    }
}

impl ServiceMap {
    /// First matching rule wins.
    pub fn resolve(&self, labels: &BTreeMap<String, String>, pod: &str) -> String {
        for rule in &self.rules {
            match rule {
                ServiceRule::Label {
                    key,
                    equals,
                    service,
                } => {
                    let Some(value) = labels.get(key).filter(|v| !v.is_empty()) else {
                        continue;
                    };
                    if equals.as_ref().is_some_and(|e| e != value) {
                        continue;
                    }
                    return service.clone().unwrap_or_else(|| value.clone());
                }
                ServiceRule::PodPrefix { prefix, service } => {
                    if pod.starts_with(prefix.as_str()) {
                        return service.clone();
                    }
                }
            }
        }
        match self.fallback {
            Fallback::UsePodName if !pod.is_empty() => pod.to_string(),
            _ => UNATTRIBUTED.to_string(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn window() -> TimeWindow {
        TimeWindow::from_secs(0, 60).unwrap()
    }

    fn usage(service: &str, id: &str, compute: Joules, net: u64, sto: u64) -> ContainerUsage {
        ContainerUsage {
            container_id: id.into(),
            pod: id.into(),
            service: service.into(),
            compute_joules: compute,
            network_bytes: net,
            storage_bytes: sto,
            window: window(),
        }
    }

    fn breakdown(c: u64, n: u64, s: u64) -> ServiceEnergyBreakdown {
        ServiceEnergyBreakdown::new(
            "svc",
            Joules::from_whole(c),
            Joules::from_whole(n),
            Joules::from_whole(s),
        )
    }

    #[test]
    fn unit_conversion() {
        assert_eq!(kwh_per_gb_to_j_per_byte(0.0).unwrap(), 0.0);
        // 1 kWh = 3.6e6 J spread over 1e9 bytes
        assert_eq!(kwh_per_gb_to_j_per_byte(1.0).unwrap(), 0.0036);
        assert!((kwh_per_gb_to_j_per_byte(0.06).unwrap() - 2.16e-4).abs() <= 1e-19);
        assert!(kwh_per_gb_to_j_per_byte(-0.1).is_err());
        assert!(kwh_per_gb_to_j_per_byte(f64::NAN).is_err());
        assert!(kwh_per_gb_to_j_per_byte(f64::INFINITY).is_err());
    }

    #[test]
    fn attributable_energy_examples() {
        assert_eq!(attributable_energy(0, 2.16e-4).unwrap(), Joules::ZERO);
        // 1 GB at 0.06 kWh/GB = 0.06 kWh = 216 kJ
        assert_eq!(
            attributable_energy(1_000_000_000, 2.16e-4).unwrap(),
            Joules::from_whole(216_000)
        );
        // 0.5 GB at 0.002 kWh/GB = 0.001 kWh = 3.6 kJ
        assert_eq!(
            attributable_energy(500_000_000, 7.2e-6).unwrap(),
            Joules::from_whole(3600)
        );
    }

    #[test]
    fn joules_decimal_conversions() {
        assert_eq!(Joules::from_f64(0.0036).unwrap().to_string(), "0.0036");
        assert_eq!(Joules::from_f64(12.3456).unwrap().to_string(), "12.3456");
        assert_eq!(Joules::from_f64(216000.0).unwrap().to_string(), "216000");
        assert_eq!(Joules::from_f64(1e-18).unwrap().attojoules(), 1);
        assert_eq!(Joules::from_f64(1e-30).unwrap(), Joules::ZERO);
        // half-to-even at the attojoule
        assert_eq!(Joules::from_f64(2.5e-18).unwrap().attojoules(), 2);
        assert_eq!(Joules::from_f64(3.5e-18).unwrap().attojoules(), 4);
        assert!(Joules::from_f64(-1.0).is_err());
        assert!(Joules::from_f64(1e30).is_err());
        for s in ["0", "1", "0.5", "123.000000000000000001", "216000"] {
            assert_eq!(s.parse::<Joules>().unwrap().to_string(), s);
        }
        assert_eq!("7.50".parse::<Joules>().unwrap().to_string(), "7.5");
        assert!("-1".parse::<Joules>().is_err());
        assert!("x".parse::<Joules>().is_err());
    }

    #[test]
    fn breakdown_examples() {
        let f = EnergyIntensityFactors::from_kwh_per_gb(0.06, 0.002).unwrap();
        let b = container_breakdown(&usage("a", "a-0", Joules::from_whole(3), 0, 0), &f);
        assert_eq!(b.total_joules, Joules::from_whole(3));
        assert_eq!(b.share_compute, 1.0);

        let b = breakdown(37, 40, 23);
        assert_eq!(b.total_joules, Joules::from_whole(100));
        assert!((b.share_compute - 0.37).abs() < 1e-15);
        assert!((b.share_network - 0.40).abs() < 1e-15);
        assert!((b.share_storage - 0.23).abs() < 1e-15);

        let b = container_breakdown(&usage("a", "a-0", Joules::ZERO, 0, 0), &f);
        assert_eq!(b.total_joules, Joules::ZERO);
        assert_eq!((b.share_compute, b.share_network, b.share_storage), (0.0, 0.0, 0.0));
    }

    #[test]
    fn aggregate_examples() {
        let f = EnergyIntensityFactors::from_kwh_per_gb(0.06, 0.002).unwrap();
        let out = aggregate_services(
            &[
                usage("a", "a-0", Joules::from_whole(3), 0, 0),
                usage("a", "a-1", Joules::from_whole(4), 0, 0),
            ],
            &f,
        )
        .unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].compute_joules, Joules::from_whole(7));

        assert!(aggregate_services(&[], &f).unwrap().is_empty());

        let out = aggregate_services(
            &[
                usage("b", "b-0", Joules::ZERO, 1_000_000_000, 0),
                usage("a", "a-0", Joules::ZERO, 1_000_000_000, 0),
            ],
            &f,
        )
        .unwrap();
        assert_eq!(out.len(), 2);
        assert_eq!(out[0].service, "a");
        for b in &out {
            assert_eq!(b.network_joules, Joules::from_whole(216_000));
        }
    }

    #[test]
    fn aggregate_rejects_mixed_windows() {
        let f = EnergyIntensityFactors::from_kwh_per_gb(0.06, 0.002).unwrap();
        let mut other = usage("a", "a-1", Joules::ZERO, 0, 0);
        other.window = TimeWindow::from_secs(0, 30).unwrap();
        let err = aggregate_services(&[usage("a", "a-0", Joules::ZERO, 0, 0), other], &f);
        assert!(matches!(err, Err(ModelError::MixedWindows { .. })));
    }

    #[test]
    fn underestimation_examples() {
        assert_eq!(compute_only_underestimation(&breakdown(5, 0, 0)), 0.0);
        assert!((compute_only_underestimation(&breakdown(37, 40, 23)) - 63.0).abs() < 1e-12);
        assert_eq!(compute_only_underestimation(&breakdown(0, 10, 0)), 100.0);
        assert_eq!(compute_only_underestimation(&breakdown(0, 0, 0)), 0.0);
    }

    #[test]
    fn dominance_examples() {
        assert_eq!(dominant_component(&breakdown(37, 40, 23)).unwrap(), Component::Network);
        assert_eq!(dominant_component(&breakdown(5, 5, 5)).unwrap(), Component::Compute);
        assert_eq!(dominant_component(&breakdown(100, 1, 1)).unwrap(), Component::Compute);
        assert_eq!(dominant_component(&breakdown(1, 2, 2)).unwrap(), Component::Network);
        assert_eq!(dominant_component(&breakdown(1, 1, 2)).unwrap(), Component::Storage);
        assert!(matches!(
            dominant_component(&breakdown(0, 0, 0)),
            Err(ModelError::UndefinedDominance(_))
        ));
    }

    #[test]
    fn service_map_resolution() {
        let labels = |pairs: &[(&str, &str)]| -> BTreeMap<String, String> {
            pairs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect()
        };
        let map = ServiceMap {
            rules: vec![
                ServiceRule::PodPrefix {
                    prefix: "otel-".into(),
                    service: "collector".into(),
                },
                ServiceRule::Label {
                    key: "app".into(),
                    equals: Some("cart".into()),
                    service: Some("shop".into()),
                },
                ServiceRule::Label {
                    key: "container".into(),
                    equals: None,
                    service: None,
                },
            ],
            fallback: Fallback::UnattributedBucket,
        };
        assert_eq!(map.resolve(&labels(&[("container", "x")]), "otel-abc"), "collector");
        assert_eq!(map.resolve(&labels(&[("app", "cart"), ("container", "x")]), "p"), "shop");
        assert_eq!(map.resolve(&labels(&[("app", "web"), ("container", "x")]), "p"), "x");
        assert_eq!(map.resolve(&labels(&[("container", "")]), "p"), UNATTRIBUTED);

        let default = ServiceMap::default();
        assert_eq!(default.resolve(&labels(&[]), "lonely-pod"), "lonely-pod");
        assert_eq!(default.resolve(&labels(&[("container", "frontend")]), "f-0"), "frontend");
    }

    #[test]
    fn service_map_yaml() {
        let yaml = "rules:\n  - match: pod_prefix\n    prefix: jaeger\n    service: tracing\nfallback: unattributed-bucket\n";
        let map: ServiceMap = serde_yaml::from_str(yaml).unwrap();
        assert_eq!(map.fallback, Fallback::UnattributedBucket);
        assert!(serde_yaml::from_str::<ServiceMap>("rulez: []").is_err());
    }
}
