//! End-to-end mode: drive a real alarm service over TCP and feed the
//! resulting alarms into the trial engine.
//!
//! The detector side is scripted from the campaign plan — for each detected
//! trial the sensor streams the consecutive high-confidence windows the
//! server's debounce policy requires, for each silent trial it streams
//! sub-threshold windows — and a responder connection collects the alarms.
//! Timing inside the reports stays on the simulation clock (detection takes
//! `k` analysis windows), so the campaign report is byte-identical across
//! runs even though real sockets sit in the middle.

use std::net::ToSocketAddrs;
use std::time::Duration;

use fallwatch_net::{ResponderClient, SensorClient};

use crate::campaign::{plan_trials, CampaignReport, Schedule};
use crate::map::GridMap;
use crate::trial::{run_trial, AlarmInstant, TimingConfig};
use crate::SimError;

/// Configuration for a live (socketed) campaign.
#[derive(Debug, Clone)]
pub struct LiveConfig {
    pub schedule: Schedule,
    pub seed: u64,
    pub timing: TimingConfig,
    /// Simulated seconds covered by one analysis window.
    pub window_period_s: f64,
    /// Consecutive high-confidence windows the server needs before it
    /// raises an alarm; must match the server's policy.
    pub consecutive_k: usize,
    /// Class label carried by fall predictions.
    pub fall_class: String,
    /// Confidence sent for windows that should trip the policy.
    pub high_confidence: f64,
    /// Confidence sent for windows that must not.
    pub low_confidence: f64,
    /// Wall-clock patience for an alarm the schedule says must arrive.
    pub alarm_wait: Duration,
    /// Wall-clock check that a silent trial really stays silent.
    pub quiet_wait: Duration,
}

impl LiveConfig {
    pub fn new(schedule: Schedule, seed: u64) -> LiveConfig {
        LiveConfig {
            schedule,
            seed,
            timing: TimingConfig::default(),
            window_period_s: 1.0,
            consecutive_k: 3,
            fall_class: "fall".into(),
            high_confidence: 0.95,
            low_confidence: 0.05,
            alarm_wait: Duration::from_secs(5),
            quiet_wait: Duration::from_millis(150),
        }
    }

    fn validate(&self) -> Result<(), SimError> {
        if !(self.window_period_s.is_finite() && self.window_period_s > 0.0) {
            return Err(SimError::Live(format!(
                "window period must be positive, got {}",
                self.window_period_s
            )));
        }
        if self.consecutive_k == 0 {
            return Err(SimError::Live("consecutive_k must be at least 1".into()));
        }
        for (name, v) in [
            ("high_confidence", self.high_confidence),
            ("low_confidence", self.low_confidence),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(SimError::Live(format!("{name} must be in [0, 1], got {v}")));
            }
        }
        Ok(())
    }
}

fn sim_ms(t_s: f64) -> i64 {
    (t_s * 1000.0).round() as i64
}

/// Run the campaign against the alarm service at `addr`: one sensor, one
/// responder, `schedule.trials` episodes in sequence.
pub fn run_live_campaign(
    addr: impl ToSocketAddrs + Clone,
    map: &GridMap,
    cfg: &LiveConfig,
) -> Result<CampaignReport, SimError> {
    cfg.validate()?;
    let mut sensor = SensorClient::connect(addr.clone(), "sim-sensor")?;
    let mut responder = ResponderClient::connect(addr, "sim-responder")?;

    let plan = plan_trials(&cfg.schedule, cfg.seed);
    let mut window_id: u64 = 0;
    let mut reports = Vec::with_capacity(plan.len());

    for (i, trial) in plan.iter().enumerate() {
        let wp = cfg.window_period_s;
        // A sub-threshold window first, so the previous episode's latch
        // releases and this trial owns a fresh run of windows.
        sensor.send_prediction(
            window_id,
            &cfg.fall_class,
            cfg.low_confidence,
            sim_ms(trial.fall_time_s - wp),
        )?;
        window_id += 1;

        let confidence = if trial.detected {
            cfg.high_confidence
        } else {
            cfg.low_confidence
        };
        for j in 0..cfg.consecutive_k {
            // Window j covers the fall and ends (j+1) periods after it.
            sensor.send_prediction(
                window_id,
                &cfg.fall_class,
                confidence,
                sim_ms(trial.fall_time_s + (j as f64 + 1.0) * wp),
            )?;
            window_id += 1;
        }

        let alarms: Vec<AlarmInstant> = if trial.detected {
            let Some(alarm) = responder.recv_alarm(cfg.alarm_wait)? else {
                return Err(SimError::Live(format!(
                    "trial {}: alarm service raised no alarm within {:?}",
                    i + 1,
                    cfg.alarm_wait
                )));
            };
            log::debug!("trial {}: alarm event {} received", i + 1, alarm.event_id);
            // Detection completes when the k-th window ends: k periods of
            // simulated time after the fall, whatever the socket latency.
            vec![AlarmInstant {
                event_id: alarm.event_id,
                fall_time_s: trial.fall_time_s,
                latency_s: cfg.consecutive_k as f64 * wp,
                class: cfg.fall_class.clone(),
            }]
        } else {
            if let Some(unexpected) = responder.recv_alarm(cfg.quiet_wait)? {
                return Err(SimError::Live(format!(
                    "trial {}: unexpected alarm event {} on a silent trial",
                    i + 1,
                    unexpected.event_id
                )));
            }
            Vec::new()
        };

        reports.push(run_trial(map, &cfg.timing, i + 1, &alarms)?);
    }

    Ok(CampaignReport::from_trials(reports))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::campaign::run_campaign;
    use crate::trial::Outcome;
    use fallwatch_net::{AlarmServer, ServerConfig};

    fn run_once(seed: u64) -> CampaignReport {
        let server = AlarmServer::bind(
            "127.0.0.1:0",
            ServerConfig {
                retry_interval: Duration::from_millis(40),
                ..ServerConfig::default()
            },
        )
        .unwrap();
        let addr = server.local_addr();
        let cfg = LiveConfig::new("7of8".parse().unwrap(), seed);
        let report = run_live_campaign(addr, &GridMap::bundled_two_room(), &cfg).unwrap();
        server.stop();
        report
    }

    #[test]
    fn live_seven_of_eight_hits_rate_and_bound() {
        let report = run_once(1);
        assert_eq!(report.trials.len(), 8);
        assert_eq!(report.success_rate, 0.875);
        for t in &report.trials {
            if t.outcome == Outcome::Success {
                assert!(t.total_response_s.unwrap() <= 180.0);
                // Detection latency on the simulation clock: k windows.
                assert_eq!(t.alarm_latency_s, Some(3.0));
            }
        }
    }

    #[test]
    fn live_campaign_is_byte_identical_across_runs() {
        let a = run_once(4);
        let b = run_once(4);
        assert_eq!(a.to_json(), b.to_json());
    }

    #[test]
    fn live_and_offline_campaigns_miss_the_same_trials() {
        let live = run_once(11);
        let offline = run_campaign(
            &GridMap::bundled_two_room(),
            &TimingConfig::default(),
            &"7of8".parse().unwrap(),
            11,
        )
        .unwrap();
        let pattern = |r: &CampaignReport| -> Vec<bool> {
            r.trials.iter().map(|t| t.detected).collect()
        };
        assert_eq!(pattern(&live), pattern(&offline));
    }

    #[test]
    fn invalid_live_configs_are_rejected() {
        let mut cfg = LiveConfig::new("1of1".parse().unwrap(), 0);
        cfg.consecutive_k = 0;
        let err = run_live_campaign("127.0.0.1:1", &GridMap::bundled_two_room(), &cfg);
        assert!(err.is_err());
        let mut cfg = LiveConfig::new("1of1".parse().unwrap(), 0);
        cfg.high_confidence = 1.5;
        assert!(run_live_campaign("127.0.0.1:1", &GridMap::bundled_two_room(), &cfg).is_err());
    }
}
