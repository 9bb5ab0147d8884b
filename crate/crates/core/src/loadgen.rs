//! Open-loop constant-rate load driver.
//!
//! Request `i` is dispatched at `start + round(i * 1000 / rate)` ms for as
//! long as that offset is below the duration, whatever the responses do.
//! Requests arriving while `max_in_flight` are outstanding are shed and
//! counted as failed.

use std::collections::{BTreeMap, BinaryHeap};
use std::cmp::Reverse;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::time::Timestamp;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LoadError {
    #[error("invalid load profile: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Route {
    pub path: String,
    #[serde(default = "unit_weight")]
    pub weight: f64,
}

fn unit_weight() -> f64 {
    1.0
}

impl Route {
    pub fn new(path: &str, weight: f64) -> Self {
        Route {
            path: path.to_string(),
            weight,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LoadProfile {
    /// Base URL; empty means the system under evaluation itself.
    pub target: String,
    pub routes: Vec<Route>,
    /// Requests per second.
    pub rate: f64,
    /// Seconds.
    pub duration: f64,
    pub max_in_flight: usize,
    pub seed: u64,
}

impl Default for LoadProfile {
    fn default() -> Self {
        LoadProfile {
            target: String::new(),
            routes: vec![Route::new("/recommendation", 1.0)],
            rate: 10.0,
            duration: 60.0,
            max_in_flight: 64,
            seed: 0,
        }
    }
}

impl LoadProfile {
    pub fn validate(&self) -> Result<(), LoadError> {
        let bad = |m: String| Err(LoadError::Invalid(m));
        if self.routes.is_empty() {
            return bad("no routes".into());
        }
        for r in &self.routes {
            if !r.path.starts_with('/') {
                return bad(format!("route `{}` must start with `/`", r.path));
            }
            if !(r.weight.is_finite() && r.weight > 0.0) {
                return bad(format!("route `{}` has weight {}; weights must be positive", r.path, r.weight));
            }
        }
        if !(self.rate.is_finite() && self.rate > 0.0) {
            return bad(format!("rate must be positive, got {}", self.rate));
        }
        if !(self.duration.is_finite() && self.duration > 0.0) {
            return bad(format!("duration must be positive, got {}", self.duration));
        }
        if self.rate * self.duration < 1.0 {
            return bad(format!(
                "rate x duration = {} schedules no request",
                self.rate * self.duration
            ));
        }
        if self.max_in_flight == 0 {
            return bad("max_in_flight must be at least 1".into());
        }
        Ok(())
    }

    fn duration_millis(&self) -> i64 {
        (self.duration * 1000.0).round() as i64
    }

    /// Dispatch offsets in milliseconds from the start.
    pub fn schedule(&self) -> impl Iterator<Item = i64> + '_ {
        let end = self.duration_millis();
        (0u64..)
            .map(|i| (i as f64 * 1000.0 / self.rate).round() as i64)
            .take_while(move |&off| off < end)
    }
}

/// Seeded weighted route draw.
pub struct RouteSampler {
    rng: ChaCha8Rng,
    dist: Option<WeightedIndex<f64>>,
}

impl RouteSampler {
    pub fn new(profile: &LoadProfile) -> Result<Self, LoadError> {
        profile.validate()?;
        let dist = if profile.routes.len() > 1 {
            let w = WeightedIndex::new(profile.routes.iter().map(|r| r.weight))
                .map_err(|e| LoadError::Invalid(e.to_string()))?;
            Some(w)
        } else {
            None
        };
        Ok(RouteSampler {
            rng: ChaCha8Rng::seed_from_u64(profile.seed),
            dist,
        })
    }

    /// Index into the profile's routes.
    pub fn next_route(&mut self) -> usize {
        match &self.dist {
            Some(d) => d.sample(&mut self.rng),
            None => 0,
        }
    }
}

pub trait Clock {
    fn now(&self) -> Timestamp;

    fn sleep_until(&mut self, t: Timestamp);

    /// True when time only moves through `sleep_until`.
    fn is_simulated(&self) -> bool;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct WallClock;

impl Clock for WallClock {
    fn now(&self) -> Timestamp {
        Timestamp::now()
    }

    fn sleep_until(&mut self, t: Timestamp) {
        let wait = t.millis() - Timestamp::now().millis();
        if wait > 0 {
            std::thread::sleep(Duration::from_millis(wait as u64));
        }
    }

    fn is_simulated(&self) -> bool {
        false
    }
}

/// Simulated clock that only moves when slept on.
#[derive(Debug, Clone, Copy, Default)]
pub struct ManualClock(pub Timestamp);

impl Clock for ManualClock {
    fn now(&self) -> Timestamp {
        self.0
    }

    fn sleep_until(&mut self, t: Timestamp) {
        self.0 = self.0.max(t);
    }

    fn is_simulated(&self) -> bool {
        true
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Response {
    pub ok: bool,
    pub latency: Duration,
}

pub trait LoadTarget: Sync {
    fn send(&self, path: &str) -> Response;
}

/// Plain HTTP GET against `base + path`.
pub struct HttpTarget {
    base: String,
    agent: ureq::Agent,
}

impl HttpTarget {
    pub fn new(base: &str, timeout: Duration) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        HttpTarget {
            base: base.trim_end_matches('/').to_string(),
            agent,
        }
    }
}

impl LoadTarget for HttpTarget {
    fn send(&self, path: &str) -> Response {
        let started = Instant::now();
        let ok = match self.agent.get(format!("{}{}", self.base, path)).call() {
            Ok(mut resp) => {
                // drain so the connection can be reused
                let _ = resp.body_mut().read_to_vec();
                resp.status().is_success()
            }
            Err(e) => {
                log::debug!("request to {path} failed: {e}");
                false
            }
        };
        Response {
            ok,
            latency: started.elapsed(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LoadStats {
    pub sent: u64,
    pub completed: u64,
    pub failed: u64,
    /// Seconds, over completed requests.
    pub p50: f64,
    pub p95: f64,
    pub p99: f64,
    pub actual_rate: f64,
    pub first_dispatch: Option<Timestamp>,
    pub last_dispatch: Option<Timestamp>,
    pub route_counts: BTreeMap<String, u64>,
}

/// Nearest-rank quantile of sorted values.
pub fn nearest_rank(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return 0.0;
    }
    let rank = (q * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

struct Tally {
    sent: u64,
    completed: u64,
    failed: u64,
    latencies: Vec<f64>,
    route_counts: BTreeMap<String, u64>,
    first: Option<Timestamp>,
    last: Option<Timestamp>,
}

impl Tally {
    fn new() -> Self {
        Tally {
            sent: 0,
            completed: 0,
            failed: 0,
            latencies: Vec::new(),
            route_counts: BTreeMap::new(),
            first: None,
            last: None,
        }
    }

    fn dispatched(&mut self, at: Timestamp, path: &str) {
        self.sent += 1;
        self.first.get_or_insert(at);
        self.last = Some(at);
        *self.route_counts.entry(path.to_string()).or_default() += 1;
    }

    fn record(&mut self, r: Response) {
        if r.ok {
            self.completed += 1;
            self.latencies.push(r.latency.as_secs_f64());
        } else {
            self.failed += 1;
        }
    }

    fn finish(mut self, profile: &LoadProfile) -> LoadStats {
        self.latencies.sort_by(f64::total_cmp);
        let actual_rate = match (self.first, self.last) {
            (Some(a), Some(b)) if self.sent > 1 && b > a => {
                (self.sent - 1) as f64 / ((b.millis() - a.millis()) as f64 / 1000.0)
            }
            _ => self.sent as f64 / profile.duration,
        };
        LoadStats {
            sent: self.sent,
            completed: self.completed,
            failed: self.failed,
            p50: nearest_rank(&self.latencies, 0.50),
            p95: nearest_rank(&self.latencies, 0.95),
            p99: nearest_rank(&self.latencies, 0.99),
            actual_rate,
            first_dispatch: self.first,
            last_dispatch: self.last,
            route_counts: self.route_counts,
        }
    }
}

/// Drives the profile against `target`. With a simulated clock responses
/// return immediately and complete at `dispatch + latency`; with a wall
/// clock each request runs on its own thread.
pub fn run_load(
    profile: &LoadProfile,
    clock: &mut dyn Clock,
    target: &dyn LoadTarget,
) -> Result<LoadStats, LoadError> {
    let mut sampler = RouteSampler::new(profile)?;
    let start = clock.now();
    if clock.is_simulated() {
        Ok(run_simulated(profile, start, clock, target, &mut sampler))
    } else {
        Ok(run_wall(profile, start, clock, target, &mut sampler))
    }
}

fn run_simulated(
    profile: &LoadProfile,
    start: Timestamp,
    clock: &mut dyn Clock,
    target: &dyn LoadTarget,
    sampler: &mut RouteSampler,
) -> LoadStats {
    let mut tally = Tally::new();
    let mut in_flight: BinaryHeap<Reverse<i64>> = BinaryHeap::new();
    for off in profile.schedule() {
        let at = start.add_millis(off);
        clock.sleep_until(at);
        while in_flight.peek().is_some_and(|Reverse(done)| *done <= at.millis()) {
            in_flight.pop();
        }
        let path = &profile.routes[sampler.next_route()].path;
        tally.dispatched(at, path);
        if in_flight.len() >= profile.max_in_flight {
            tally.failed += 1;
            continue;
        }
        let r = target.send(path);
        in_flight.push(Reverse(at.millis() + r.latency.as_millis() as i64));
        tally.record(r);
    }
    tally.finish(profile)
}

fn run_wall(
    profile: &LoadProfile,
    start: Timestamp,
    clock: &mut dyn Clock,
    target: &dyn LoadTarget,
    sampler: &mut RouteSampler,
) -> LoadStats {
    let tally = Mutex::new(Tally::new());
    let in_flight = AtomicUsize::new(0);
    std::thread::scope(|scope| {
        for off in profile.schedule() {
            let at = start.add_millis(off);
            clock.sleep_until(at);
            let path = profile.routes[sampler.next_route()].path.as_str();
            let mut t = tally.lock().expect("tally lock");
            t.dispatched(at, path);
            if in_flight.load(Ordering::SeqCst) >= profile.max_in_flight {
                t.failed += 1;
                continue;
            }
            drop(t);
            in_flight.fetch_add(1, Ordering::SeqCst);
            let (tally, in_flight) = (&tally, &in_flight);
            scope.spawn(move || {
                let r = target.send(path);
                tally.lock().expect("tally lock").record(r);
                in_flight.fetch_sub(1, Ordering::SeqCst);
            });
        }
    });
    tally.into_inner().expect("tally lock").finish(profile)
}
