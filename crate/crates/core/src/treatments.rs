//! Treatments: controlled configuration changes applied before measurement.
//!
//! A treatment is resolved from a [`TreatmentRegistry`] by key, validates its
//! own parameters, and then goes through apply, verify and revert. Every
//! effect is an [`Action`] executed by an [`Environment`].

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::{actions, Action, EnvError, Environment};
use crate::time::Timestamp;

pub const SCRAPE_INTERVAL: &str = "set_scrape_interval";
pub const TRACE_SAMPLING: &str = "set_trace_sampling";
pub const SERVICE_MESH: &str = "toggle_service_mesh";

/// Environment settings the built-in treatments read and write.
pub mod settings {
    pub const SCRAPE_INTERVAL_SECONDS: &str = "scrape_interval_seconds";
    pub const TRACE_SAMPLING_PERCENT: &str = "trace_sampling_percent";
    pub const SERVICE_MESH_ENABLED: &str = "service_mesh_enabled";
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TreatmentError {
    #[error("treatment `{0}` is not registered")]
    UnknownKey(String),
    #[error("treatment `{0}` is already registered")]
    DuplicateKey(String),
    #[error("invalid parameters for `{key}`: {reason}")]
    InvalidParams { key: String, reason: String },
    #[error("applying `{key}` failed: {source}")]
    Apply { key: String, source: EnvError },
    #[error("verifying `{key}` failed: {source}")]
    Verify { key: String, source: EnvError },
    #[error("reverting `{key}` failed: {source}")]
    Revert { key: String, source: EnvError },
    #[error("cannot revert `{0}`: it was never applied")]
    NotApplied(String),
}

/// A scalar parameter value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Scalar {
    Bool(bool),
    Int(i64),
    Float(f64),
    Str(String),
}

impl Scalar {
    pub fn as_f64(&self) -> Option<f64> {
        match *self {
            Scalar::Int(i) => Some(i as f64),
            Scalar::Float(f) => Some(f),
            _ => None,
        }
    }

    pub fn as_bool(&self) -> Option<bool> {
        match *self {
            Scalar::Bool(b) => Some(b),
            _ => None,
        }
    }
}

impl fmt::Display for Scalar {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Scalar::Bool(b) => write!(f, "{b}"),
            Scalar::Int(i) => write!(f, "{i}"),
            Scalar::Float(x) => write!(f, "{x}"),
            Scalar::Str(s) => f.write_str(s),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TreatmentSpec {
    pub key: String,
    #[serde(default)]
    pub params: BTreeMap<String, Scalar>,
    #[serde(default)]
    pub target: String,
}

impl TreatmentSpec {
    pub fn new(key: &str) -> Self {
        TreatmentSpec {
            key: key.to_string(),
            params: BTreeMap::new(),
            target: String::new(),
        }
    }

    pub fn param(mut self, name: &str, value: Scalar) -> Self {
        self.params.insert(name.to_string(), value);
        self
    }

    pub fn target(mut self, target: &str) -> Self {
        self.target = target.to_string();
        self
    }
}

/// A validated, ready-to-apply treatment.
pub trait Treatment: Send + Sync + fmt::Debug {
    fn key(&self) -> &str;

    /// Settings this treatment changes.
    fn touches(&self) -> Vec<String>;

    fn apply_actions(&self) -> Vec<Action>;

    /// Setting values that must be observed after apply.
    fn expected(&self) -> Vec<(String, String)>;

    /// Actions that undo apply, given the values read before it.
    fn restore_actions(&self, previous: &BTreeMap<String, String>) -> Vec<Action>;
}

pub type TreatmentFactory =
    Arc<dyn Fn(&TreatmentSpec) -> Result<Box<dyn Treatment>, TreatmentError> + Send + Sync>;

/// Key to factory map; enumeration is sorted.
#[derive(Clone, Default)]
pub struct TreatmentRegistry {
    factories: BTreeMap<String, TreatmentFactory>,
}

impl fmt::Debug for TreatmentRegistry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(self.factories.keys()).finish()
    }
}

impl TreatmentRegistry {
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn with_builtins() -> Self {
        let mut r = Self::empty();
        r.register(SCRAPE_INTERVAL, Arc::new(|s| scrape_interval(s).map(boxed)))
            .expect("builtin keys are distinct");
        r.register(TRACE_SAMPLING, Arc::new(|s| trace_sampling(s).map(boxed)))
            .expect("builtin keys are distinct");
        r.register(SERVICE_MESH, Arc::new(|s| service_mesh(s).map(boxed)))
            .expect("builtin keys are distinct");
        r
    }

    pub fn register(&mut self, key: &str, factory: TreatmentFactory) -> Result<(), TreatmentError> {
        if self.factories.contains_key(key) {
            return Err(TreatmentError::DuplicateKey(key.to_string()));
        }
        self.factories.insert(key.to_string(), factory);
        Ok(())
    }

    pub fn resolve(&self, key: &str) -> Option<&TreatmentFactory> {
        self.factories.get(key)
    }

    pub fn keys(&self) -> Vec<&str> {
        self.factories.keys().map(String::as_str).collect()
    }

    /// Resolves and validates without touching any environment.
    pub fn build(&self, spec: &TreatmentSpec) -> Result<Box<dyn Treatment>, TreatmentError> {
        let factory = self
            .resolve(&spec.key)
            .ok_or_else(|| TreatmentError::UnknownKey(spec.key.clone()))?;
        factory(spec)
    }
}

fn boxed(t: SettingTreatment) -> Box<dyn Treatment> {
    Box::new(t)
}

/// Sets one environment setting to one value.
#[derive(Debug, Clone)]
pub struct SettingTreatment {
    key: String,
    setting: &'static str,
    param: &'static str,
    value: String,
}

impl Treatment for SettingTreatment {
    fn key(&self) -> &str {
        &self.key
    }

    fn touches(&self) -> Vec<String> {
        vec![self.setting.to_string()]
    }

    fn apply_actions(&self) -> Vec<Action> {
        vec![Action::new(&self.key).param(self.param, &self.value)]
    }

    fn expected(&self) -> Vec<(String, String)> {
        vec![(self.setting.to_string(), self.value.clone())]
    }

    fn restore_actions(&self, previous: &BTreeMap<String, String>) -> Vec<Action> {
        match previous.get(self.setting) {
            Some(old) => vec![Action::new(&self.key).param(self.param, old)],
            None => vec![Action::new(actions::REVERT).param("key", &self.key)],
        }
    }
}

fn check_params(spec: &TreatmentSpec, allowed: &[&str]) -> Result<(), TreatmentError> {
    for name in spec.params.keys() {
        if !allowed.contains(&name.as_str()) {
            return Err(invalid(spec, format!("unknown parameter `{name}`")));
        }
    }
    Ok(())
}

fn invalid(spec: &TreatmentSpec, reason: String) -> TreatmentError {
    TreatmentError::InvalidParams {
        key: spec.key.clone(),
        reason,
    }
}

fn number_param(spec: &TreatmentSpec, name: &str) -> Result<f64, TreatmentError> {
    let v = spec
        .params
        .get(name)
        .ok_or_else(|| invalid(spec, format!("missing parameter `{name}`")))?;
    v.as_f64()
        .filter(|x| x.is_finite())
        .ok_or_else(|| invalid(spec, format!("`{name}` must be a number, got `{v}`")))
}

/// `set_scrape_interval(seconds)`, seconds > 0.
pub fn scrape_interval(spec: &TreatmentSpec) -> Result<SettingTreatment, TreatmentError> {
    check_params(spec, &["seconds"])?;
    let seconds = number_param(spec, "seconds")?;
    if seconds <= 0.0 {
        return Err(invalid(spec, format!("`seconds` must be positive, got {seconds}")));
    }
    Ok(SettingTreatment {
        key: spec.key.clone(),
        setting: settings::SCRAPE_INTERVAL_SECONDS,
        param: "seconds",
        value: seconds.to_string(),
    })
}

/// `set_trace_sampling(percent)`, percent in [0, 100].
pub fn trace_sampling(spec: &TreatmentSpec) -> Result<SettingTreatment, TreatmentError> {
    check_params(spec, &["percent"])?;
    let percent = number_param(spec, "percent")?;
    if !(0.0..=100.0).contains(&percent) {
        return Err(invalid(spec, format!("`percent` must lie in [0, 100], got {percent}")));
    }
    Ok(SettingTreatment {
        key: spec.key.clone(),
        setting: settings::TRACE_SAMPLING_PERCENT,
        param: "percent",
        value: percent.to_string(),
    })
}

/// `toggle_service_mesh(enabled)`.
pub fn service_mesh(spec: &TreatmentSpec) -> Result<SettingTreatment, TreatmentError> {
    check_params(spec, &["enabled"])?;
    let v = spec
        .params
        .get("enabled")
        .ok_or_else(|| invalid(spec, "missing parameter `enabled`".into()))?;
    let enabled = v
        .as_bool()
        .ok_or_else(|| invalid(spec, format!("`enabled` must be a boolean, got `{v}`")))?;
    Ok(SettingTreatment {
        key: spec.key.clone(),
        setting: settings::SERVICE_MESH_ENABLED,
        param: "enabled",
        value: enabled.to_string(),
    })
}

/// Record of one treatment's lifecycle. Timestamps are milliseconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TreatmentOutcome {
    pub key: String,
    #[serde(default)]
    pub target: String,
    #[serde(default)]
    pub params: BTreeMap<String, Scalar>,
    pub applied_at: Option<Timestamp>,
    pub verified_at: Option<Timestamp>,
    pub reverted_at: Option<Timestamp>,
    pub verified: bool,
    #[serde(default)]
    pub detail: String,
    /// Action lines that undo the treatment.
    #[serde(default)]
    pub restore: Vec<String>,
}

fn same_setting_value(a: &str, b: &str) -> bool {
    match (a.parse::<f64>(), b.parse::<f64>()) {
        (Ok(x), Ok(y)) => x == y,
        _ => a.eq_ignore_ascii_case(b),
    }
}

/// Validates, reads prior values, executes, then verifies by reading back.
/// On an environment rejection the restore actions are attempted before the
/// error is returned. Settings the environment does not report are taken as
/// in force once their action exited successfully.
pub fn apply(
    registry: &TreatmentRegistry,
    spec: &TreatmentSpec,
    env: &mut dyn Environment,
) -> Result<TreatmentOutcome, TreatmentError> {
    let treatment = registry.build(spec)?;
    let key = spec.key.clone();

    let mut previous = BTreeMap::new();
    for setting in treatment.touches() {
        let value = env.inspect(&setting).map_err(|source| TreatmentError::Apply {
            key: key.clone(),
            source,
        })?;
        if let Some(v) = value {
            previous.insert(setting, v);
        }
    }
    let restore = treatment.restore_actions(&previous);

    let applied_at = env.now();
    for action in treatment.apply_actions() {
        if let Err(source) = env.execute(&action) {
            for undo in &restore {
                if let Err(e) = env.execute(undo) {
                    log::warn!("restore after failed apply of `{key}`: {e}");
                }
            }
            return Err(TreatmentError::Apply { key, source });
        }
    }

    let mut verified = true;
    let mut detail = Vec::new();
    for (setting, want) in treatment.expected() {
        let got = env.inspect(&setting).map_err(|source| TreatmentError::Verify {
            key: key.clone(),
            source,
        })?;
        match got {
            Some(v) if same_setting_value(&v, &want) => detail.push(format!("{setting}={v}")),
            Some(v) => {
                verified = false;
                detail.push(format!("{setting}={v} (expected {want})"));
            }
            None => detail.push(format!("{setting} not reported; accepted on exit status")),
        }
    }

    Ok(TreatmentOutcome {
        key,
        target: spec.target.clone(),
        params: spec.params.clone(),
        applied_at: Some(applied_at),
        verified_at: Some(env.now()),
        reverted_at: None,
        verified,
        detail: detail.join("; "),
        restore: restore.iter().map(Action::to_string).collect(),
    })
}

/// Executes the recorded restore actions. Reverting an already reverted
/// outcome returns it unchanged.
pub fn revert(
    outcome: &TreatmentOutcome,
    env: &mut dyn Environment,
) -> Result<TreatmentOutcome, TreatmentError> {
    if outcome.applied_at.is_none() {
        return Err(TreatmentError::NotApplied(outcome.key.clone()));
    }
    if outcome.reverted_at.is_some() {
        return Ok(outcome.clone());
    }
    for line in &outcome.restore {
        let action: Action = line.parse().map_err(|source| TreatmentError::Revert {
            key: outcome.key.clone(),
            source,
        })?;
        env.execute(&action).map_err(|source| TreatmentError::Revert {
            key: outcome.key.clone(),
            source,
        })?;
    }
    let mut out = outcome.clone();
    out.reverted_at = Some(env.now());
    Ok(out)
}
