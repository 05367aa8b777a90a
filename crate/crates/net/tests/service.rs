//! End-to-end service tests on loopback sockets.

use fallwatch_net::latency::{record_latency, read_log, LogEntry};
use fallwatch_net::protocol::{now_ms, Message};
use fallwatch_net::server::ServerStats;
use fallwatch_net::{AlarmServer, PolicyMode, ResponderClient, SensorClient, ServerConfig};
use std::io::{BufRead, BufReader, Write};
use std::net::TcpStream;
use std::time::{Duration, Instant};

fn test_config() -> ServerConfig {
    ServerConfig {
        retry_interval: Duration::from_millis(40),
        heartbeat_interval: Duration::from_secs(30),
        ..ServerConfig::default()
    }
}

fn start(cfg: ServerConfig) -> AlarmServer {
    AlarmServer::bind("127.0.0.1:0", cfg).expect("bind loopback")
}

/// Sends `k` consecutive qualifying fall predictions.
fn trigger_alarm(sensor: &mut SensorClient, first_window: u64) {
    for i in 0..3 {
        sensor
            .send_prediction(first_window + i, "fall", 0.95, now_ms())
            .unwrap();
    }
}

#[test]
fn three_fall_predictions_reach_every_responder_once() {
    let server = start(test_config());
    let addr = server.local_addr();
    let mut r1 = ResponderClient::connect(addr, "resp-1").unwrap();
    let mut r2 = ResponderClient::connect(addr, "resp-2").unwrap();
    let mut sensor = SensorClient::connect(addr, "desk-sensor").unwrap();

    let sent_at = Instant::now();
    trigger_alarm(&mut sensor, 0);

    let a1 = r1
        .recv_alarm(Duration::from_secs(2))
        .unwrap()
        .expect("responder 1 should receive the alarm");
    let elapsed = sent_at.elapsed();
    let a2 = r2
        .recv_alarm(Duration::from_secs(2))
        .unwrap()
        .expect("responder 2 should receive the alarm");

    assert_eq!(a1.event_id, a2.event_id);
    assert_eq!(a1.source_id, "desk-sensor");
    assert!(a1.confidence >= 0.8);
    assert!(
        elapsed < Duration::from_millis(100),
        "loopback round-trip took {elapsed:?}"
    );

    // three more qualifying windows with no dip: still the same episode,
    // so no second alarm
    trigger_alarm(&mut sensor, 3);
    assert!(r1.recv_alarm(Duration::from_millis(200)).unwrap().is_none());
    assert_eq!(r1.seen_count(), 1);
    assert_eq!(r2.seen_count(), 1);
    server.stop();
}

#[test]
fn dip_starts_a_new_episode_with_a_fresh_event_id() {
    let server = start(test_config());
    let addr = server.local_addr();
    let mut responder = ResponderClient::connect(addr, "r").unwrap();
    let mut sensor = SensorClient::connect(addr, "s").unwrap();

    trigger_alarm(&mut sensor, 0);
    let first = responder.recv_alarm(Duration::from_secs(2)).unwrap().unwrap();
    sensor.send_prediction(3, "walk", 0.9, now_ms()).unwrap();
    trigger_alarm(&mut sensor, 4);
    let second = responder.recv_alarm(Duration::from_secs(2)).unwrap().unwrap();

    assert!(second.event_id > first.event_id, "event ids strictly increase");
    server.stop();
}

#[test]
fn unacked_alarm_is_retried_until_acked() {
    let server = start(test_config());
    let addr = server.local_addr();
    let mut responder = ResponderClient::connect(addr, "slow").unwrap();
    responder.auto_ack = false;
    let mut sensor = SensorClient::connect(addr, "s").unwrap();

    trigger_alarm(&mut sensor, 0);
    let alarm = responder.recv_alarm(Duration::from_secs(2)).unwrap().unwrap();

    // with no ack, the 40 ms retry loop must redeliver
    let drained = responder.drain_alarms(Duration::from_millis(300)).unwrap();
    assert!(drained.is_empty(), "redeliveries must be deduplicated");
    assert!(
        responder.duplicates >= 2,
        "expected several redeliveries, saw {}",
        responder.duplicates
    );

    responder.ack(alarm.event_id).unwrap();
    std::thread::sleep(Duration::from_millis(200));
    let before = responder.duplicates;
    responder.drain_alarms(Duration::from_millis(200)).unwrap();
    assert_eq!(responder.duplicates, before, "retries must stop after ack");
    server.stop();
}

#[test]
fn pending_alarm_redelivered_after_reconnect() {
    let server = start(test_config());
    let addr = server.local_addr();
    let mut responder = ResponderClient::connect(addr, "mobile").unwrap();
    responder.auto_ack = false;
    let mut sensor = SensorClient::connect(addr, "s").unwrap();

    trigger_alarm(&mut sensor, 0);
    let alarm = responder.recv_alarm(Duration::from_secs(2)).unwrap().unwrap();
    drop(responder); // disconnect before acking

    let mut reconnected = ResponderClient::connect(addr, "mobile").unwrap();
    let redelivered = reconnected
        .recv_alarm(Duration::from_secs(2))
        .unwrap()
        .expect("pending alarm must be redelivered to the same source_id");
    assert_eq!(redelivered.event_id, alarm.event_id);
    server.stop();
}

#[test]
fn responder_joining_later_gets_only_future_alarms() {
    let server = start(test_config());
    let addr = server.local_addr();
    let mut early = ResponderClient::connect(addr, "early").unwrap();
    let mut sensor = SensorClient::connect(addr, "s").unwrap();

    trigger_alarm(&mut sensor, 0);
    let first = early.recv_alarm(Duration::from_secs(2)).unwrap().unwrap();

    let mut late = ResponderClient::connect(addr, "late").unwrap();
    assert!(late.recv_alarm(Duration::from_millis(200)).unwrap().is_none());

    sensor.send_prediction(3, "walk", 0.9, now_ms()).unwrap();
    trigger_alarm(&mut sensor, 4);
    let second = late.recv_alarm(Duration::from_secs(2)).unwrap().unwrap();
    assert!(second.event_id > first.event_id);
    assert_eq!(late.seen_count(), 1);
    server.stop();
}

#[test]
fn event_ids_first_occurrences_are_increasing_per_connection() {
    let server = start(test_config());
    let addr = server.local_addr();
    let mut responder = ResponderClient::connect(addr, "watcher").unwrap();
    responder.auto_ack = false; // force retries so duplicates interleave
    let mut sensor = SensorClient::connect(addr, "s").unwrap();

    for episode in 0..3u64 {
        trigger_alarm(&mut sensor, episode * 4);
        sensor
            .send_prediction(episode * 4 + 3, "walk", 0.9, now_ms())
            .unwrap();
        std::thread::sleep(Duration::from_millis(60));
    }

    let alarms = responder.drain_alarms(Duration::from_millis(300)).unwrap();
    let mut pre_drained = vec![];
    pre_drained.extend(alarms.iter().map(|a| a.event_id));
    assert_eq!(pre_drained.len(), 3, "three episodes, three alarms");
    let mut sorted = pre_drained.clone();
    sorted.sort_unstable();
    assert_eq!(
        pre_drained, sorted,
        "first occurrences must arrive in event order"
    );
    assert!(responder.duplicates > 0, "retries should have interleaved");
    server.stop();
}

#[test]
fn malformed_line_closes_only_that_connection() {
    let server = start(test_config());
    let addr = server.local_addr();
    let mut responder = ResponderClient::connect(addr, "r").unwrap();
    let mut sensor = SensorClient::connect(addr, "s").unwrap();

    // raw connection speaking garbage
    let mut bad = TcpStream::connect(addr).unwrap();
    bad.write_all(b"this is not json\n").unwrap();
    bad.flush().unwrap();
    let mut reply = String::new();
    let mut reader = BufReader::new(bad.try_clone().unwrap());
    reader.read_line(&mut reply).unwrap();
    let msg = Message::parse(&reply).unwrap();
    assert!(matches!(msg, Message::Error { .. }), "got {msg:?}");
    // connection is then closed by the server
    let mut rest = String::new();
    assert_eq!(reader.read_line(&mut rest).unwrap(), 0);

    // the well-behaved pair is unaffected
    trigger_alarm(&mut sensor, 0);
    assert!(responder.recv_alarm(Duration::from_secs(2)).unwrap().is_some());
    server.stop();
}

#[test]
fn prediction_without_hello_is_rejected() {
    let server = start(test_config());
    let addr = server.local_addr();
    let mut raw = TcpStream::connect(addr).unwrap();
    raw.write_all(
        Message::Prediction {
            window_id: 0,
            class: "fall".into(),
            confidence: 0.99,
            ts_ms: now_ms(),
        }
        .to_line()
        .as_bytes(),
    )
    .unwrap();
    let mut reader = BufReader::new(raw.try_clone().unwrap());
    let mut reply = String::new();
    reader.read_line(&mut reply).unwrap();
    assert!(matches!(
        Message::parse(&reply).unwrap(),
        Message::Error { .. }
    ));
    server.stop();
}

#[test]
fn passthrough_mode_fans_out_sensor_alarms() {
    let server = start(ServerConfig {
        mode: PolicyMode::Passthrough,
        ..test_config()
    });
    let addr = server.local_addr();
    let mut responder = ResponderClient::connect(addr, "r").unwrap();
    let mut sensor = SensorClient::connect(addr, "s").unwrap();

    // predictions alone never trigger in passthrough mode
    trigger_alarm(&mut sensor, 0);
    assert!(responder.recv_alarm(Duration::from_millis(200)).unwrap().is_none());

    sensor.send_alarm(0.93).unwrap();
    let alarm = responder.recv_alarm(Duration::from_secs(2)).unwrap().unwrap();
    assert_eq!(alarm.source_id, "s");
    assert!((alarm.confidence - 0.93).abs() < 1e-12);

    // a below-threshold alarm violates the service invariant and is refused
    sensor.send_alarm(0.5).unwrap();
    let reply = sensor.recv(Duration::from_secs(1)).unwrap();
    assert!(matches!(reply, Some(Message::Error { .. })), "{reply:?}");
    assert!(responder.recv_alarm(Duration::from_millis(200)).unwrap().is_none());
    server.stop();
}

#[test]
fn silent_connection_is_pruned_by_heartbeat_misses() {
    let server = start(ServerConfig {
        heartbeat_interval: Duration::from_millis(50),
        ..test_config()
    });
    let addr = server.local_addr();

    let silent = TcpStream::connect(addr).unwrap();
    silent
        .set_read_timeout(Some(Duration::from_secs(3)))
        .unwrap();
    let mut reader = BufReader::new(silent.try_clone().unwrap());
    // never write anything; after 3 missed heartbeats the server hangs up
    let started = Instant::now();
    let mut line = String::new();
    loop {
        line.clear();
        match reader.read_line(&mut line) {
            Ok(0) => break, // closed by server
            Ok(_) => continue, // heartbeats from the server
            Err(e) => panic!("unexpected read error: {e}"),
        }
    }
    let elapsed = started.elapsed();
    assert!(
        elapsed < Duration::from_secs(2),
        "silent connection should be pruned quickly, took {elapsed:?}"
    );

    // a responder that answers heartbeats stays connected well past the
    // prune horizon; the sensor keeps itself alive with explicit heartbeats
    let mut responder = ResponderClient::connect(addr, "alive").unwrap();
    let mut sensor = SensorClient::connect(addr, "s").unwrap();
    for _ in 0..10 {
        let waited = responder.recv_alarm(Duration::from_millis(40)).unwrap();
        assert!(waited.is_none());
        sensor.send_heartbeat().unwrap();
    }
    trigger_alarm(&mut sensor, 0);
    assert!(
        responder.recv_alarm(Duration::from_secs(2)).unwrap().is_some(),
        "heartbeat-answering responder must still be connected"
    );
    server.stop();
}

#[test]
fn event_log_supports_latency_analysis() {
    let dir = tempfile::tempdir().unwrap();
    let log_path = dir.path().join("events.jsonl");
    let server = start(ServerConfig {
        log_path: Some(log_path.clone()),
        ..test_config()
    });
    let addr = server.local_addr();
    let mut responder = ResponderClient::connect(addr, "r").unwrap();
    let mut sensor = SensorClient::connect(addr, "s").unwrap();

    trigger_alarm(&mut sensor, 0);
    responder.recv_alarm(Duration::from_secs(2)).unwrap().unwrap();
    // allow the ack to reach the server before sampling the log
    std::thread::sleep(Duration::from_millis(150));

    let events = server.events();
    let report = record_latency(&events);
    assert_eq!(report.per_alarm.len(), 1);
    assert!(report.unmatched.is_empty(), "{report:?}");
    assert!(report.detection_to_alarm.count == 1);
    assert!(report.alarm_to_ack.count == 1);
    assert!(report.alarm_to_ack.max_ms < 1_000);

    server.stop();
    let from_file = read_log(&log_path).unwrap();
    assert_eq!(from_file, events, "file log must mirror the in-memory log");
    assert!(from_file
        .iter()
        .any(|e| matches!(e, LogEntry::Delivery { .. })));
}

#[test]
fn stats_count_traffic_and_duplicates_do_not_inflate_alarms() {
    let server = start(test_config());
    let addr = server.local_addr();
    let mut responder = ResponderClient::connect(addr, "r").unwrap();
    responder.auto_ack = false;
    let mut sensor = SensorClient::connect(addr, "s").unwrap();

    trigger_alarm(&mut sensor, 0);
    let alarm = responder.recv_alarm(Duration::from_secs(2)).unwrap().unwrap();
    // let retries pile up duplicates, then ack
    responder.drain_alarms(Duration::from_millis(250)).unwrap();
    responder.ack(alarm.event_id).unwrap();
    std::thread::sleep(Duration::from_millis(100));

    let ServerStats {
        alarms_emitted,
        predictions_received,
        ..
    } = server.stats();
    assert_eq!(alarms_emitted, 1, "duplicate deliveries are not new alarms");
    assert_eq!(predictions_received, 3);
    assert!(responder.duplicates > 0);
    assert_eq!(responder.seen_count(), 1);
    server.stop();
}
