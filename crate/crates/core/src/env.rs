//! Environment handles: everything an experiment does to the system under
//! evaluation goes through an [`Environment`].
//!
//! Effects are expressed as declarative [`Action`]s rendered as one line of
//! text, `ACTION <name> <param=value ...>`. The simulator interprets them
//! directly; [`ExternalEnvironment`] pipes them into a user-supplied command.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::process::{Command, Stdio};
use std::str::FromStr;
use std::time::Duration;

use thiserror::Error;

use crate::loadgen::{self, Clock, HttpTarget, LoadProfile, LoadStats, WallClock};
use crate::metrics::{MetricSource, PromClient, ResponseQuery, StorageSnapshot};
use crate::time::{TimeWindow, Timestamp};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnvError {
    #[error("malformed action: {0}")]
    MalformedAction(String),
    #[error("environment rejected `{action}`: {reason}")]
    Rejected { action: String, reason: String },
    #[error("pre-flight check failed: {0}")]
    Preflight(String),
    #[error("{0}")]
    Other(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EnvKind {
    ExternalCommand,
    Simulated,
}

/// `ACTION <name> <param=value ...>`; parameters keep insertion order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Action {
    name: String,
    params: Vec<(String, String)>,
}

fn is_token(s: &str) -> bool {
    !s.is_empty() && !s.chars().any(char::is_whitespace)
}

impl Action {
    pub fn new(name: &str) -> Self {
        Action {
            name: name.to_string(),
            params: Vec::new(),
        }
    }

    pub fn param(mut self, key: &str, value: impl fmt::Display) -> Self {
        self.params.push((key.to_string(), value.to_string()));
        self
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn params(&self) -> &[(String, String)] {
        &self.params
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.params.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn validate(&self) -> Result<(), EnvError> {
        if !is_token(&self.name) {
            return Err(EnvError::MalformedAction(format!("bad action name `{}`", self.name)));
        }
        for (k, v) in &self.params {
            if !is_token(k) || k.contains('=') || !is_token(v) {
                return Err(EnvError::MalformedAction(format!("bad parameter `{k}={v}`")));
            }
        }
        Ok(())
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ACTION {}", self.name)?;
        for (k, v) in &self.params {
            write!(f, " {k}={v}")?;
        }
        Ok(())
    }
}

impl FromStr for Action {
    type Err = EnvError;

    fn from_str(line: &str) -> Result<Self, Self::Err> {
        let mut words = line.split_whitespace();
        if words.next() != Some("ACTION") {
            return Err(EnvError::MalformedAction(format!("`{line}` does not start with ACTION")));
        }
        let name = words
            .next()
            .ok_or_else(|| EnvError::MalformedAction(format!("`{line}` has no action name")))?;
        let mut action = Action::new(name);
        for word in words {
            let (k, v) = word
                .split_once('=')
                .ok_or_else(|| EnvError::MalformedAction(format!("parameter `{word}` lacks `=`")))?;
            action = action.param(k, v);
        }
        action.validate()?;
        Ok(action)
    }
}

/// `key=value` lines reported back by an action.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ActionOutput {
    pub values: BTreeMap<String, String>,
}

impl ActionOutput {
    pub fn with(key: &str, value: impl fmt::Display) -> Self {
        let mut out = ActionOutput::default();
        out.values.insert(key.to_string(), value.to_string());
        out
    }

    pub fn parse(text: &str) -> Self {
        let values = text
            .lines()
            .filter_map(|l| l.trim().split_once('='))
            .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
            .collect();
        ActionOutput { values }
    }

    pub fn render(&self) -> String {
        self.values.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }
}

pub mod actions {
    pub const CLEAN: &str = "clean";
    pub const SETUP: &str = "setup";
    pub const INSPECT: &str = "inspect";
    pub const REVERT: &str = "revert";
    pub const SNAPSHOT_STORAGE: &str = "snapshot_storage";
}

/// What an experiment needs from the system under evaluation.
pub trait Environment: Send {
    fn kind(&self) -> EnvKind;

    fn execute(&mut self, action: &Action) -> Result<ActionOutput, EnvError>;

    fn now(&self) -> Timestamp;

    fn preflight(&mut self, queries: &[ResponseQuery]) -> Result<(), EnvError>;

    fn storage_snapshot(&mut self) -> Result<StorageSnapshot, EnvError>;

    fn generate_load(&mut self, profile: &LoadProfile) -> Result<LoadStats, EnvError>;

    /// Blocks (or advances simulated time) until `t`.
    fn wait_until(&mut self, t: Timestamp);

    fn metric_source(&self) -> &dyn MetricSource;

    /// Reads a setting through an `inspect` action; `None` when the
    /// environment does not report it.
    fn inspect(&mut self, setting: &str) -> Result<Option<String>, EnvError> {
        let out = self.execute(&Action::new(actions::INSPECT).param("setting", setting))?;
        Ok(out.values.get(setting).cloned())
    }
}

/// Runs a shell command per action, writing the action line to its stdin.
/// `{action}` in the template is replaced by the action name. Exit status 0
/// is success; stdout `key=value` lines are returned as output.
#[derive(Debug, Clone)]
pub struct CommandExecutor {
    template: String,
}

impl CommandExecutor {
    pub fn new(template: &str) -> Self {
        CommandExecutor {
            template: template.to_string(),
        }
    }

    pub fn run(&self, action: &Action) -> Result<ActionOutput, EnvError> {
        action.validate()?;
        let command = self.template.replace("{action}", action.name());
        let rejected = |reason: String| EnvError::Rejected {
            action: action.to_string(),
            reason,
        };
        let mut child = Command::new("sh")
            .arg("-c")
            .arg(&command)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .spawn()
            .map_err(|e| rejected(format!("cannot spawn `{command}`: {e}")))?;
        if let Some(mut stdin) = child.stdin.take() {
            // the command may exit without reading its input
            let _ = writeln!(stdin, "{action}");
        }
        let out = child
            .wait_with_output()
            .map_err(|e| rejected(format!("waiting for `{command}`: {e}")))?;
        if !out.status.success() {
            return Err(rejected(format!(
                "{} ({})",
                out.status,
                String::from_utf8_lossy(&out.stderr).trim()
            )));
        }
        Ok(ActionOutput::parse(&String::from_utf8_lossy(&out.stdout)))
    }
}

/// A live deployment: actions go to an external command, load is real HTTP,
/// metrics come from a Prometheus-compatible endpoint, time is wall time.
pub struct ExternalEnvironment {
    executor: Option<CommandExecutor>,
    metrics: PromClient,
}

impl ExternalEnvironment {
    pub fn new(executor: Option<CommandExecutor>, metrics: PromClient) -> Self {
        ExternalEnvironment { executor, metrics }
    }
}

impl Environment for ExternalEnvironment {
    fn kind(&self) -> EnvKind {
        EnvKind::ExternalCommand
    }

    fn execute(&mut self, action: &Action) -> Result<ActionOutput, EnvError> {
        match &self.executor {
            Some(exec) => exec.run(action),
            // lifecycle hooks are optional without an executor; treatments are not
            None => match action.name() {
                actions::CLEAN | actions::SETUP | actions::INSPECT | actions::SNAPSHOT_STORAGE => {
                    Ok(ActionOutput::default())
                }
                _ => Err(EnvError::Rejected {
                    action: action.to_string(),
                    reason: "no executor command configured".into(),
                }),
            },
        }
    }

    fn now(&self) -> Timestamp {
        Timestamp::now()
    }

    fn preflight(&mut self, queries: &[ResponseQuery]) -> Result<(), EnvError> {
        let Some(q) = queries.first() else {
            return Ok(());
        };
        let end = Timestamp::now();
        let window = TimeWindow::new(end.add_millis(-q.step_millis().max(1000)), end)
            .map_err(|e| EnvError::Preflight(e.to_string()))?;
        match self.metrics.query_range(q, &window) {
            Ok(_) => Ok(()),
            Err(e) => Err(EnvError::Preflight(format!("{}: {e}", self.metrics.endpoint()))),
        }
    }

    fn storage_snapshot(&mut self) -> Result<StorageSnapshot, EnvError> {
        let taken_at = Timestamp::now();
        let out = self.execute(&Action::new(actions::SNAPSHOT_STORAGE))?;
        let mut rows = Vec::with_capacity(out.values.len());
        for (id, v) in out.values {
            let bytes = v.parse().map_err(|_| EnvError::Rejected {
                action: actions::SNAPSHOT_STORAGE.into(),
                reason: format!("bytes for `{id}` is not a count: `{v}`"),
            })?;
            rows.push((id, bytes));
        }
        StorageSnapshot::from_rows(taken_at, rows).map_err(|e| EnvError::Other(e.to_string()))
    }

    fn generate_load(&mut self, profile: &LoadProfile) -> Result<LoadStats, EnvError> {
        let target = HttpTarget::new(&profile.target, Duration::from_secs(10));
        loadgen::run_load(profile, &mut WallClock, &target).map_err(|e| EnvError::Other(e.to_string()))
    }

    fn wait_until(&mut self, t: Timestamp) {
        WallClock.sleep_until(t);
    }

    fn metric_source(&self) -> &dyn MetricSource {
        &self.metrics
    }
}
