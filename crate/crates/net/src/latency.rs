//! Latency analysis over the service's append-only event log.

use super::NetError;
use serde::{Deserialize, Serialize};
use std::io::BufRead;
use std::path::Path;

/// One line of the event log. `Delivery` is recorded on every send attempt,
/// so duplicates show up here by design.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LogEntry {
    Prediction {
        ts_ms: i64,
        source_id: String,
        window_id: u64,
        class: String,
        confidence: f64,
    },
    FallAlarm {
        ts_ms: i64,
        event_id: u64,
        source_id: String,
        confidence: f64,
    },
    Delivery {
        ts_ms: i64,
        event_id: u64,
        responder: String,
    },
    Ack {
        ts_ms: i64,
        event_id: u64,
        responder: String,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AlarmLatency {
    pub event_id: u64,
    /// Alarm emission minus the newest prediction from the same source at or
    /// before it; `None` when no such prediction exists.
    pub detection_to_alarm_ms: Option<i64>,
    /// First acknowledgment of this event minus alarm emission; `None` when
    /// the alarm was never acked.
    pub alarm_to_ack_ms: Option<i64>,
}

/// Count, mean, and max over the matched values of one leg.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Aggregate {
    pub count: usize,
    pub mean_ms: f64,
    pub max_ms: i64,
}

impl Aggregate {
    fn over(values: impl Iterator<Item = i64>) -> Self {
        let values: Vec<i64> = values.collect();
        if values.is_empty() {
            return Self {
                count: 0,
                mean_ms: 0.0,
                max_ms: 0,
            };
        }
        Self {
            count: values.len(),
            mean_ms: values.iter().sum::<i64>() as f64 / values.len() as f64,
            max_ms: values.iter().copied().max().unwrap(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LatencyReport {
    pub per_alarm: Vec<AlarmLatency>,
    pub detection_to_alarm: Aggregate,
    pub alarm_to_ack: Aggregate,
    /// Alarms missing at least one leg; excluded from that leg's aggregate.
    pub unmatched: Vec<u64>,
}

/// Pairs each alarm with its triggering prediction and its first ack.
pub fn record_latency(entries: &[LogEntry]) -> LatencyReport {
    let mut per_alarm = Vec::new();
    for e in entries {
        let LogEntry::FallAlarm {
            ts_ms: alarm_ts,
            event_id,
            source_id,
            ..
        } = e
        else {
            continue;
        };

        let detection = entries
            .iter()
            .filter_map(|e| match e {
                LogEntry::Prediction { ts_ms, source_id: s, .. }
                    if s == source_id && *ts_ms <= *alarm_ts =>
                {
                    Some(*ts_ms)
                }
                _ => None,
            })
            .max();
        let ack = entries
            .iter()
            .filter_map(|e| match e {
                LogEntry::Ack { ts_ms, event_id: id, .. } if id == event_id => Some(*ts_ms),
                _ => None,
            })
            .min();

        per_alarm.push(AlarmLatency {
            event_id: *event_id,
            detection_to_alarm_ms: detection.map(|d| alarm_ts - d),
            alarm_to_ack_ms: ack.map(|a| a - alarm_ts),
        });
    }

    let detection_to_alarm =
        Aggregate::over(per_alarm.iter().filter_map(|a| a.detection_to_alarm_ms));
    let alarm_to_ack = Aggregate::over(per_alarm.iter().filter_map(|a| a.alarm_to_ack_ms));
    let unmatched = per_alarm
        .iter()
        .filter(|a| a.detection_to_alarm_ms.is_none() || a.alarm_to_ack_ms.is_none())
        .map(|a| a.event_id)
        .collect();
    LatencyReport {
        per_alarm,
        detection_to_alarm,
        alarm_to_ack,
        unmatched,
    }
}

/// Loads a JSON-lines event log written by the server.
pub fn read_log(path: &Path) -> Result<Vec<LogEntry>, NetError> {
    let file = std::fs::File::open(path)?;
    let mut entries = Vec::new();
    for (i, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        entries.push(
            serde_json::from_str(&line)
                .map_err(|e| NetError::Protocol(format!("log line {}: {e}", i + 1)))?,
        );
    }
    Ok(entries)
}
