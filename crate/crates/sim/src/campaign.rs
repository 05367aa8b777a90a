//! Batches of trials with seeded variation and aggregate statistics.
//!
//! A schedule such as `7of8` fixes the detection pattern — seven of the
//! eight trials raise an alarm, one is silent — while the seed varies when
//! each fall happens and how quickly it is detected. Everything downstream
//! of the seed is pure computation, so a campaign report is byte-identical
//! across runs.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use fallwatch_core::rng::DetRng;

use crate::map::GridMap;
use crate::trial::{run_trial, AlarmInstant, Outcome, TimingConfig, TrialReport};
use crate::SimError;

/// Detection pattern `<detected>of<trials>`, e.g. `7of8`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Schedule {
    pub detected: usize,
    pub trials: usize,
}

impl Schedule {
    pub fn new(detected: usize, trials: usize) -> Result<Schedule, SimError> {
        if trials == 0 {
            return Err(SimError::Schedule("schedule needs at least one trial".into()));
        }
        if detected > trials {
            return Err(SimError::Schedule(format!(
                "schedule cannot detect {detected} falls in only {trials} trials"
            )));
        }
        Ok(Schedule { detected, trials })
    }
}

impl fmt::Display for Schedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}of{}", self.detected, self.trials)
    }
}

impl FromStr for Schedule {
    type Err = SimError;

    fn from_str(s: &str) -> Result<Schedule, SimError> {
        let err = || {
            SimError::Schedule(format!(
                "schedule must look like `7of8` (detected `of` trials), got {s:?}"
            ))
        };
        let (d, t) = s.split_once("of").ok_or_else(err)?;
        let detected: usize = d.trim().parse().map_err(|_| err())?;
        let trials: usize = t.trim().parse().map_err(|_| err())?;
        Schedule::new(detected, trials)
    }
}

/// Per-trial scenario drawn from the seed before any trial runs.
#[derive(Debug, Clone)]
pub(crate) struct PlannedTrial {
    pub detected: bool,
    /// When the fall happens on the simulation clock.
    pub fall_time_s: f64,
    /// Detection delay used by offline campaigns.
    pub latency_s: f64,
}

/// Deterministic expansion of a schedule: which trials detect, when each
/// fall occurs, and the offline detection latency. Detected slots are
/// spread by a seeded shuffle so misses are not always the tail trials.
pub(crate) fn plan_trials(schedule: &Schedule, seed: u64) -> Vec<PlannedTrial> {
    let rng = DetRng::new(seed).fork("campaign");
    let mut detected_flags = vec![false; schedule.trials];
    let mut order: Vec<usize> = (0..schedule.trials).collect();
    rng.fork("detected-slots").shuffle(&mut order);
    for &slot in order.iter().take(schedule.detected) {
        detected_flags[slot] = true;
    }
    detected_flags
        .iter()
        .enumerate()
        .map(|(i, &detected)| {
            let mut tr = rng.fork(&format!("trial/{i}"));
            PlannedTrial {
                detected,
                fall_time_s: tr.uniform_in(5.0, 30.0),
                latency_s: tr.uniform_in(1.5, 3.5),
            }
        })
        .collect()
}

/// Campaign output: every trial report plus the two aggregates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignReport {
    pub trials: Vec<TrialReport>,
    /// Successful trials over all trials.
    pub success_rate: f64,
    /// Mean total response over successful trials (0 when none succeeded).
    pub mean_response_s: f64,
}

impl CampaignReport {
    /// Aggregate a set of finished trials.
    pub fn from_trials(trials: Vec<TrialReport>) -> CampaignReport {
        let successes: Vec<&TrialReport> = trials
            .iter()
            .filter(|t| t.outcome == Outcome::Success)
            .collect();
        let success_rate = successes.len() as f64 / trials.len() as f64;
        let mean_response_s = if successes.is_empty() {
            0.0
        } else {
            successes
                .iter()
                .map(|t| t.total_response_s.expect("successful trial has a total"))
                .sum::<f64>()
                / successes.len() as f64
        };
        CampaignReport { trials, success_rate, mean_response_s }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("campaign report serializes")
    }

    /// One CSV row per trial; times are empty where a stage never ran.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "trial,outcome,detection_class,alarm_latency_s,nav_time_s,door_time_s,total_response_s\n",
        );
        for t in &self.trials {
            let f = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
            let outcome = match t.outcome {
                Outcome::Success => "success",
                Outcome::MissedDetection => "missed_detection",
                Outcome::Timeout => "timeout",
            };
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                t.trial,
                outcome,
                t.detection_class.as_deref().unwrap_or(""),
                f(t.alarm_latency_s),
                f(t.nav_time_s),
                f(t.door_time_s),
                f(t.total_response_s),
            ));
        }
        out
    }
}

/// Integer-percent display used in human-readable summaries: the fraction
/// is truncated, not rounded, so 0.875 reads as 87%.
pub fn percent_truncated(rate: f64) -> u32 {
    (rate.clamp(0.0, 1.0) * 100.0).floor() as u32
}

/// Run a full offline campaign on one map.
pub fn run_campaign(
    map: &GridMap,
    timing: &TimingConfig,
    schedule: &Schedule,
    seed: u64,
) -> Result<CampaignReport, SimError> {
    let mut reports = Vec::with_capacity(schedule.trials);
    for (i, plan) in plan_trials(schedule, seed).iter().enumerate() {
        let alarms: Vec<AlarmInstant> = if plan.detected {
            vec![AlarmInstant {
                event_id: i as u64 + 1,
                fall_time_s: plan.fall_time_s,
                latency_s: plan.latency_s,
                class: "fall".into(),
            }]
        } else {
            Vec::new()
        };
        reports.push(run_trial(map, timing, i + 1, &alarms)?);
    }
    Ok(CampaignReport::from_trials(reports))
}
