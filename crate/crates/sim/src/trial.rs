//! One simulated response trial: a patrolling robot, a fall, an alarm, and
//! the accounting of how long help took.
//!
//! Simulated clocks only — nothing here sleeps. The robot leaves its start
//! cell at t = 0, walks to patrol point A, then shuttles A-B-A-… at constant
//! speed. When the (deduplicated, earliest) alarm arrives it aborts the
//! patrol from whatever cell it occupies, plans a route to the fall
//! location, and the report decomposes the response into
//! `alarm_latency + travel + door dwell`, which sums exactly to
//! `total_response_s`.

use serde::{Deserialize, Serialize};

use crate::astar::astar;
use crate::map::{Cell, GridMap, GridPos};
use crate::SimError;

/// Speeds and dwell times for the responder platform.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimingConfig {
    /// Travel speed in meters per second.
    pub speed_mps: f64,
    /// Time to open and pass one closed door, in seconds.
    pub door_time_s: f64,
    /// How long a trial waits for the whole response before giving up.
    pub trial_window_s: f64,
}

impl Default for TimingConfig {
    fn default() -> Self {
        TimingConfig {
            speed_mps: 0.5,
            door_time_s: 30.0,
            trial_window_s: 300.0,
        }
    }
}

impl TimingConfig {
    /// Seconds to cross one cell.
    pub fn cell_time_s(&self, map: &GridMap) -> f64 {
        map.resolution_m() / self.speed_mps
    }

    /// Door dwell expressed in cell-traversal units, the currency the
    /// planner prices routes in.
    pub fn door_penalty_units(&self, map: &GridMap) -> f64 {
        self.door_time_s / self.cell_time_s(map)
    }

    fn validate(&self) -> Result<(), SimError> {
        for (name, v) in [
            ("speed_mps", self.speed_mps),
            ("door_time_s", self.door_time_s),
            ("trial_window_s", self.trial_window_s),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(SimError::Trial(format!(
                    "{name} must be finite and non-negative, got {v}"
                )));
            }
        }
        if self.speed_mps <= 0.0 {
            return Err(SimError::Trial("speed_mps must be positive".into()));
        }
        Ok(())
    }
}

/// An alarm as the trial sees it: the fall happened at `fall_time_s` on the
/// simulation clock and the alarm reached the responder `latency_s` later.
/// Redeliveries share an `event_id` and are ignored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlarmInstant {
    pub event_id: u64,
    pub fall_time_s: f64,
    pub latency_s: f64,
    /// Predicted activity label carried by the alarm.
    pub class: String,
}

/// How a trial ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    /// Alarm arrived and the robot reached the fall inside the window.
    Success,
    /// No alarm arrived within the trial window.
    MissedDetection,
    /// Alarm arrived but the response could not complete: the fall location
    /// was unreachable or the response exceeded the window.
    Timeout,
}

/// Full accounting for one trial. Time fields are `None` when the trial
/// never reached that stage (e.g. a missed detection has no travel time).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialReport {
    pub trial: usize,
    pub detected: bool,
    pub detection_class: Option<String>,
    pub alarm_latency_s: Option<f64>,
    pub nav_time_s: Option<f64>,
    pub door_time_s: Option<f64>,
    pub total_response_s: Option<f64>,
    pub outcome: Outcome,
    /// Human-readable diagnostic for abnormal endings.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub note: Option<String>,
}

/// One patrol leg: the cells entered after the leg's start cell, with the
/// time each entry takes (cell crossing plus door dwell where applicable).
#[derive(Debug, Clone)]
struct Leg {
    cells: Vec<GridPos>,
    entry_times: Vec<f64>,
    duration_s: f64,
}

impl Leg {
    fn from_cells(map: &GridMap, timing: &TimingConfig, cells: Vec<GridPos>) -> Leg {
        let cell_time = timing.cell_time_s(map);
        let entry_times: Vec<f64> = cells
            .iter()
            .map(|p| {
                if map.cell(*p) == Cell::Door {
                    cell_time + timing.door_time_s
                } else {
                    cell_time
                }
            })
            .collect();
        let duration_s = entry_times.iter().sum();
        Leg { cells, entry_times, duration_s }
    }

    /// Where the walker is `t` seconds after leaving `start` (the previous
    /// cell until the next entry completes).
    fn position_at(&self, start: GridPos, t: f64) -> GridPos {
        let mut pos = start;
        let mut elapsed = 0.0;
        for (cell, dt) in self.cells.iter().zip(&self.entry_times) {
            if t < elapsed + dt {
                return pos;
            }
            elapsed += dt;
            pos = *cell;
        }
        pos
    }

    fn reversed(&self, map: &GridMap, timing: &TimingConfig, leg_start: GridPos) -> Leg {
        // Walking the same corridor back: drop the far endpoint, reverse,
        // and finish on the original start cell.
        let mut cells: Vec<GridPos> = self.cells.iter().rev().skip(1).copied().collect();
        cells.push(leg_start);
        Leg::from_cells(map, timing, cells)
    }
}

/// Deterministic position function for the patrol: start cell to A once,
/// then A-B-A-… forever.
#[derive(Debug, Clone)]
pub struct Patrol {
    start: GridPos,
    a: GridPos,
    b: GridPos,
    to_a: Leg,
    a_to_b: Leg,
    b_to_a: Leg,
}

impl Patrol {
    pub fn new(map: &GridMap, timing: &TimingConfig) -> Result<Patrol, SimError> {
        timing.validate()?;
        let penalty = timing.door_penalty_units(map);
        let route = |from: GridPos, to: GridPos, what: &str| -> Result<Vec<GridPos>, SimError> {
            astar(map, from, to, penalty)
                .map(|p| p.steps)
                .ok_or_else(|| SimError::Trial(format!("no patrol route from {from} to {to} ({what})")))
        };
        let to_a = Leg::from_cells(map, timing, route(map.robot_start(), map.patrol_a(), "start to A")?);
        let a_to_b = Leg::from_cells(map, timing, route(map.patrol_a(), map.patrol_b(), "A to B")?);
        let b_to_a = a_to_b.reversed(map, timing, map.patrol_a());
        Ok(Patrol {
            start: map.robot_start(),
            a: map.patrol_a(),
            b: map.patrol_b(),
            to_a,
            a_to_b,
            b_to_a,
        })
    }

    /// Robot position `t` seconds after the trial starts.
    pub fn position_at(&self, t: f64) -> GridPos {
        if t < self.to_a.duration_s {
            return self.to_a.position_at(self.start, t);
        }
        let mut t = t - self.to_a.duration_s;
        let cycle = self.a_to_b.duration_s + self.b_to_a.duration_s;
        if cycle <= 0.0 {
            return self.a;
        }
        t %= cycle;
        if t < self.a_to_b.duration_s {
            self.a_to_b.position_at(self.a, t)
        } else {
            self.b_to_a.position_at(self.b, t - self.a_to_b.duration_s)
        }
    }
}

/// Run one trial against a list of alarm arrivals (possibly empty, possibly
/// containing redeliveries). Redeliveries — repeats of an `event_id` — are
/// dropped, then the earliest-arriving alarm inside the window drives the
/// response, so duplicated delivery can never change the report.
pub fn run_trial(
    map: &GridMap,
    timing: &TimingConfig,
    trial: usize,
    alarms: &[AlarmInstant],
) -> Result<TrialReport, SimError> {
    timing.validate()?;
    for a in alarms {
        for (name, v) in [("fall_time_s", a.fall_time_s), ("latency_s", a.latency_s)] {
            if !v.is_finite() || v < 0.0 {
                return Err(SimError::Trial(format!(
                    "alarm {name} must be finite and non-negative, got {v}"
                )));
            }
        }
    }

    // Deduplicate by event id (first occurrence wins), then respond to the
    // earliest arrival that lands inside the trial window.
    let mut seen: Vec<u64> = Vec::new();
    let mut chosen: Option<&AlarmInstant> = None;
    for a in alarms {
        if seen.contains(&a.event_id) {
            continue;
        }
        seen.push(a.event_id);
        let arrival = a.fall_time_s + a.latency_s;
        if arrival > timing.trial_window_s {
            continue;
        }
        let better = match chosen {
            None => true,
            Some(c) => arrival < c.fall_time_s + c.latency_s,
        };
        if better {
            chosen = Some(a);
        }
    }

    let Some(alarm) = chosen else {
        return Ok(TrialReport {
            trial,
            detected: false,
            detection_class: None,
            alarm_latency_s: None,
            nav_time_s: None,
            door_time_s: None,
            total_response_s: None,
            outcome: Outcome::MissedDetection,
            note: None,
        });
    };

    let patrol = Patrol::new(map, timing)?;
    let at_alarm = patrol.position_at(alarm.fall_time_s + alarm.latency_s);
    let Some(path) = astar(map, at_alarm, map.fall_location(), timing.door_penalty_units(map))
    else {
        return Ok(TrialReport {
            trial,
            detected: true,
            detection_class: Some(alarm.class.clone()),
            alarm_latency_s: Some(alarm.latency_s),
            nav_time_s: None,
            door_time_s: None,
            total_response_s: None,
            outcome: Outcome::Timeout,
            note: Some(format!(
                "fall location {} unreachable from {at_alarm}; no traversable route",
                map.fall_location()
            )),
        });
    };

    let nav_time_s = path.len() as f64 * timing.cell_time_s(map);
    let door_time_s = path.doors_crossed as f64 * timing.door_time_s;
    let total_response_s = alarm.latency_s + nav_time_s + door_time_s;
    let (outcome, note) = if total_response_s <= timing.trial_window_s {
        (Outcome::Success, None)
    } else {
        (
            Outcome::Timeout,
            Some(format!(
                "response of {total_response_s} s exceeds the {} s trial window",
                timing.trial_window_s
            )),
        )
    };
    Ok(TrialReport {
        trial,
        detected: true,
        detection_class: Some(alarm.class.clone()),
        alarm_latency_s: Some(alarm.latency_s),
        nav_time_s: Some(nav_time_s),
        door_time_s: Some(door_time_s),
        total_response_s: Some(total_response_s),
        outcome,
        note,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use fallwatch_core::rng::DetRng;

    fn alarm(event_id: u64, fall: f64, latency: f64) -> AlarmInstant {
        AlarmInstant {
            event_id,
            fall_time_s: fall,
            latency_s: latency,
            class: "fall".into(),
        }
    }

    #[test]
    fn patrol_visits_a_and_b_on_schedule() {
        let map = GridMap::bundled_two_room();
        let timing = TimingConfig::default();
        let patrol = Patrol::new(&map, &timing).unwrap();
        // R(5,7) to A(2,6) is 4 steps at 0.5 s/cell; A to B is 5 steps.
        assert_eq!(patrol.position_at(0.0), map.robot_start());
        assert_eq!(patrol.position_at(2.0), map.patrol_a());
        assert_eq!(patrol.position_at(4.5), map.patrol_b());
        assert_eq!(patrol.position_at(7.0), map.patrol_a());
        assert_eq!(patrol.position_at(9.5), map.patrol_b());
        // Mid-crossing the robot still occupies the previous cell.
        assert_eq!(patrol.position_at(0.25), map.robot_start());
    }

    #[test]
    fn patrol_position_matches_event_table_oracle() {
        let map = GridMap::bundled_two_room();
        let timing = TimingConfig::default();
        let patrol = Patrol::new(&map, &timing).unwrap();

        // Independent reconstruction: a flat (arrival_time, cell) table for
        // the lead-in plus enough full cycles, walked by linear scan.
        let mut table: Vec<(f64, GridPos)> = vec![(0.0, map.robot_start())];
        let mut t = 0.0;
        let extend = |leg: &Leg, t: &mut f64, table: &mut Vec<(f64, GridPos)>| {
            for (cell, dt) in leg.cells.iter().zip(&leg.entry_times) {
                *t += dt;
                table.push((*t, *cell));
            }
        };
        extend(&patrol.to_a, &mut t, &mut table);
        for _ in 0..12 {
            extend(&patrol.a_to_b, &mut t, &mut table);
            extend(&patrol.b_to_a, &mut t, &mut table);
        }

        let mut rng = DetRng::new(31337);
        for _ in 0..200 {
            let q = rng.uniform_in(0.0, 55.0);
            let expect = table
                .iter()
                .rev()
                .find(|(arr, _)| *arr <= q)
                .map(|(_, c)| *c)
                .unwrap();
            assert_eq!(patrol.position_at(q), expect, "at t={q}");
        }
    }

    #[test]
    fn response_from_patrol_point_a() {
        let map = GridMap::bundled_two_room();
        let timing = TimingConfig::default();
        // Arrival at t=2.0 puts the robot exactly on A.
        let report = run_trial(&map, &timing, 1, &[alarm(1, 0.0, 2.0)]).unwrap();
        assert_eq!(report.outcome, Outcome::Success);
        assert!(report.detected);
        assert_eq!(report.detection_class.as_deref(), Some("fall"));
        // A(2,6) -> door(5,14) is 11 steps, door -> F(3,22) is 10 more.
        assert_eq!(report.nav_time_s, Some(21.0 * 0.5));
        assert_eq!(report.door_time_s, Some(30.0));
        assert_eq!(report.total_response_s, Some(2.0 + 10.5 + 30.0));
    }

    #[test]
    fn nav_difference_between_a_and_b_equals_path_length_difference() {
        let map = GridMap::bundled_two_room();
        let timing = TimingConfig::default();
        let at_a = run_trial(&map, &timing, 1, &[alarm(1, 0.0, 2.0)]).unwrap();
        let at_b = run_trial(&map, &timing, 2, &[alarm(1, 0.0, 4.5)]).unwrap();
        assert_eq!(at_a.outcome, Outcome::Success);
        assert_eq!(at_b.outcome, Outcome::Success);
        // Routes to the fall from A and B are 21 and 20 steps; nav times
        // must differ by exactly that one-cell difference.
        let diff = at_a.nav_time_s.unwrap() - at_b.nav_time_s.unwrap();
        assert!((diff - timing.cell_time_s(&map)).abs() < 1e-12, "diff {diff}");
        assert_eq!(at_a.door_time_s, at_b.door_time_s);
    }

    #[test]
    fn no_alarm_is_a_missed_detection() {
        let map = GridMap::bundled_two_room();
        let report = run_trial(&map, &TimingConfig::default(), 3, &[]).unwrap();
        assert_eq!(report.outcome, Outcome::MissedDetection);
        assert!(!report.detected);
        assert_eq!(report.detection_class, None);
        assert_eq!(report.alarm_latency_s, None);
        assert_eq!(report.nav_time_s, None);
        assert_eq!(report.door_time_s, None);
        assert_eq!(report.total_response_s, None);
    }

    #[test]
    fn alarm_after_window_is_a_missed_detection() {
        let map = GridMap::bundled_two_room();
        let report =
            run_trial(&map, &TimingConfig::default(), 4, &[alarm(1, 290.0, 20.0)]).unwrap();
        assert_eq!(report.outcome, Outcome::MissedDetection);
    }

    #[test]
    fn duplicated_alarms_never_change_the_report() {
        let map = GridMap::bundled_two_room();
        let timing = TimingConfig::default();
        let single = run_trial(&map, &timing, 5, &[alarm(7, 1.0, 2.5)]).unwrap();
        // Redelivery of the same event id, even listed with a later arrival,
        // and a spurious later event: the report must not move.
        let noisy = run_trial(
            &map,
            &timing,
            5,
            &[
                alarm(7, 1.0, 2.5),
                alarm(7, 1.0, 2.5),
                AlarmInstant { latency_s: 9.0, ..alarm(7, 1.0, 2.5) },
                alarm(8, 1.0, 50.0),
            ],
        )
        .unwrap();
        assert_eq!(single, noisy);
    }

    #[test]
    fn accounting_identity_holds_for_random_alarms() {
        let map = GridMap::bundled_two_room();
        let timing = TimingConfig::default();
        let mut rng = DetRng::new(99);
        for i in 0..50 {
            let fall = rng.uniform_in(0.0, 60.0);
            let latency = rng.uniform_in(0.5, 6.0);
            let r = run_trial(&map, &timing, i, &[alarm(1, fall, latency)]).unwrap();
            assert_eq!(r.outcome, Outcome::Success);
            let (lat, nav, door, total) = (
                r.alarm_latency_s.unwrap(),
                r.nav_time_s.unwrap(),
                r.door_time_s.unwrap(),
                r.total_response_s.unwrap(),
            );
            assert_eq!(total, lat + nav + door, "decomposition must sum exactly");
            // On this floor every response crosses the one door exactly once.
            assert_eq!(door, timing.door_time_s);
            assert!(total <= 180.0, "two-room responses stay under 180 s, got {total}");
        }
    }

    #[test]
    fn unreachable_fall_times_out_with_diagnostics() {
        // Fall location sealed in a closet: shape-parses, but cannot be
        // reached, which a validated load would already reject.
        let text = "res 0.25\n\
                    #########\n\
                    #RAB.#F.#\n\
                    #########\n";
        let map = GridMap::parse_unvalidated(text).unwrap();
        let report =
            run_trial(&map, &TimingConfig::default(), 6, &[alarm(1, 0.0, 1.0)]).unwrap();
        assert_eq!(report.outcome, Outcome::Timeout);
        assert!(report.detected);
        assert_eq!(report.nav_time_s, None);
        assert!(report.note.as_deref().unwrap().contains("unreachable"));
    }

    #[test]
    fn response_larger_than_window_times_out() {
        let map = GridMap::bundled_two_room();
        let timing = TimingConfig {
            door_time_s: 400.0,
            ..TimingConfig::default()
        };
        let report = run_trial(&map, &timing, 7, &[alarm(1, 0.0, 2.0)]).unwrap();
        assert_eq!(report.outcome, Outcome::Timeout);
        assert!(report.note.as_deref().unwrap().contains("exceeds"));
        // The partial accounting is still reported.
        assert!(report.total_response_s.unwrap() > timing.trial_window_s);
    }

    #[test]
    fn invalid_timing_and_alarms_are_rejected() {
        let map = GridMap::bundled_two_room();
        let bad_speed = TimingConfig { speed_mps: 0.0, ..TimingConfig::default() };
        assert!(run_trial(&map, &bad_speed, 0, &[]).is_err());
        let neg = AlarmInstant { latency_s: -1.0, ..alarm(1, 0.0, 0.0) };
        assert!(run_trial(&map, &TimingConfig::default(), 0, &[neg]).is_err());
    }
}
