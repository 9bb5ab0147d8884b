//! Service-level energy experiments for containerised microservices.

pub mod analysis;
pub mod cli;
pub mod env;
pub mod loadgen;
pub mod metrics;
pub mod model;
pub mod runner;
pub mod simenv;
pub mod time;
pub mod treatments;

pub use model::{
    aggregate_services, attributable_energy, compute_only_underestimation, container_breakdown,
    dominant_component, kwh_per_gb_to_j_per_byte, Component, ContainerUsage,
    EnergyIntensityFactors, Joules, ServiceEnergyBreakdown, ServiceMap,
};
pub use time::{TimeWindow, Timestamp};
