//! Deterministic grid-world responder simulator.
//!
//! Maps are ASCII floor plans; the responder patrols between two points,
//! receives fall alarms (scripted or over a live TCP link), plans with A*,
//! pays a dwell cost at closed doors, and reports a per-trial response-time
//! decomposition plus campaign aggregates. Everything runs on simulated
//! clocks from explicit seeds, so every report is reproducible bit for bit.

pub mod astar;
pub mod campaign;
pub mod live;
pub mod map;
pub mod trial;

pub use astar::{astar, astar_cost_milli, dijkstra_cost_milli, PlannedPath};
pub use campaign::{percent_truncated, run_campaign, CampaignReport, Schedule};
pub use live::{run_live_campaign, LiveConfig};
pub use map::{Cell, GridMap, GridPos};
pub use trial::{run_trial, AlarmInstant, Outcome, Patrol, TimingConfig, TrialReport};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("map error: {0}")]
    Map(String),
    #[error("trial error: {0}")]
    Trial(String),
    #[error("schedule error: {0}")]
    Schedule(String),
    #[error("live run error: {0}")]
    Live(String),
    #[error("alarm link error: {0}")]
    Net(#[from] fallwatch_net::NetError),
}
