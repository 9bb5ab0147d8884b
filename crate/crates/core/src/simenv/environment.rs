use std::time::Duration;

use super::{Sim, SimError, SimSettings, TopologySpec};
use crate::env::{Action, ActionOutput, EnvError, EnvKind, Environment};
use crate::loadgen::{self, Clock, LoadProfile, LoadStats, LoadTarget, Response};
use crate::metrics::{MetricSource, ResponseQuery, StorageSnapshot};
use crate::time::Timestamp;

/// Simulated time of a [`Sim`]; sleeping advances it.
#[derive(Debug, Clone)]
pub struct SimClock(pub Sim);

impl Clock for SimClock {
    fn now(&self) -> Timestamp {
        self.0.now()
    }

    fn sleep_until(&mut self, t: Timestamp) {
        self.0.advance_to(t);
    }

    fn is_simulated(&self) -> bool {
        true
    }
}

impl LoadTarget for Sim {
    fn send(&self, path: &str) -> Response {
        let r = self.handle_request(path);
        Response {
            ok: r.status == 200,
            latency: r.latency,
        }
    }
}

/// An [`Environment`] backed by an in-process simulator.
#[derive(Debug, Clone)]
pub struct SimEnvironment {
    sim: Sim,
}

impl SimEnvironment {
    pub fn new(topology: TopologySpec, settings: SimSettings) -> Result<Self, SimError> {
        Ok(SimEnvironment {
            sim: Sim::build(topology, settings)?,
        })
    }

    /// The shipped topology with its own settings and the given seed.
    pub fn shipped(seed: u64) -> Self {
        let topology = TopologySpec::shipped_default();
        let settings = SimSettings {
            seed,
            ..topology.settings.clone()
        };
        Self::new(topology, settings).expect("shipped topology is valid")
    }

    pub fn sim(&self) -> &Sim {
        &self.sim
    }
}

fn rejected(action: &Action, e: SimError) -> EnvError {
    EnvError::Rejected {
        action: action.to_string(),
        reason: e.to_string(),
    }
}

impl Environment for SimEnvironment {
    fn kind(&self) -> EnvKind {
        EnvKind::Simulated
    }

    fn execute(&mut self, action: &Action) -> Result<ActionOutput, EnvError> {
        action.validate()?;
        self.sim.apply_action(action).map_err(|e| rejected(action, e))
    }

    fn now(&self) -> Timestamp {
        self.sim.now()
    }

    fn preflight(&mut self, _queries: &[ResponseQuery]) -> Result<(), EnvError> {
        Ok(())
    }

    fn storage_snapshot(&mut self) -> Result<StorageSnapshot, EnvError> {
        Ok(self.sim.storage_snapshot())
    }

    fn generate_load(&mut self, profile: &LoadProfile) -> Result<LoadStats, EnvError> {
        let mut clock = SimClock(self.sim.clone());
        loadgen::run_load(profile, &mut clock, &self.sim).map_err(|e| EnvError::Other(e.to_string()))
    }

    fn wait_until(&mut self, t: Timestamp) {
        self.sim.advance_to(t);
    }

    fn metric_source(&self) -> &dyn MetricSource {
        &self.sim
    }
}

impl SimEnvironment {
    /// Advances simulated time by `dt`.
    pub fn advance(&self, dt: Duration) -> Result<(), SimError> {
        self.sim.advance_clock(dt)
    }
}
