//! The alarm hub: thread-per-connection TCP server with a shared state
//! mutex, at-least-once alarm delivery, and an append-only event log.

use super::latency::LogEntry;
use super::protocol::{now_ms, Message, Role};
use fallwatch_core::har::policy::{DecisionPolicy, PolicyState};
use std::collections::{BTreeMap, HashMap};
use std::io::{BufRead, BufReader, Write};
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

/// Who turns predictions into alarms.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PolicyMode {
    /// Sensors stream raw predictions; the server debounces them. One
    /// authoritative debounce for any number of sensors.
    PolicyInServer,
    /// The detector debounces locally and sends `fall_alarm` messages; the
    /// server only re-stamps and fans out. Predictions are logged untouched.
    Passthrough,
}

#[derive(Clone, Debug)]
pub struct ServerConfig {
    pub policy: DecisionPolicy,
    /// Wire class name treated as the fall class (case-insensitive).
    pub fall_class: String,
    pub mode: PolicyMode,
    pub retry_interval: Duration,
    pub heartbeat_interval: Duration,
    pub log_path: Option<PathBuf>,
}

impl Default for ServerConfig {
    fn default() -> Self {
        Self {
            policy: DecisionPolicy::default(),
            fall_class: "fall".into(),
            mode: PolicyMode::PolicyInServer,
            retry_interval: Duration::from_millis(500),
            heartbeat_interval: Duration::from_secs(5),
            log_path: None,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ServerStats {
    pub connections_accepted: u64,
    pub alarms_emitted: u64,
    pub acks_received: u64,
    pub predictions_received: u64,
    pub malformed_messages: u64,
}

struct ConnHandle {
    writer: Arc<Mutex<TcpStream>>,
    /// Clone used only to shut the socket down from another thread.
    shutdown: TcpStream,
    last_seen: Instant,
    role: Option<Role>,
    source_id: Option<String>,
}

#[derive(Default)]
struct ResponderRecord {
    /// Unacked alarms in event order; replayed on every retry tick and on
    /// reconnect.
    pending: BTreeMap<u64, Message>,
    last_ack: u64,
    conn: Option<u64>,
}

#[derive(Default)]
struct HubState {
    conns: HashMap<u64, ConnHandle>,
    next_conn: u64,
    sensors: HashMap<String, PolicyState>,
    responders: HashMap<String, ResponderRecord>,
    stats: ServerStats,
}

struct Hub {
    cfg: ServerConfig,
    running: AtomicBool,
    next_event_id: AtomicU64,
    state: Mutex<HubState>,
    events: Mutex<Vec<LogEntry>>,
    log_file: Mutex<Option<std::fs::File>>,
}

impl Hub {
    fn log(&self, entry: LogEntry) {
        if let Some(f) = self.log_file.lock().unwrap().as_mut() {
            let line = serde_json::to_string(&entry).expect("log entry serialization") + "\n";
            let _ = f.write_all(line.as_bytes());
        }
        self.events.lock().unwrap().push(entry);
    }
}

pub struct AlarmServer {
    hub: Arc<Hub>,
    addr: SocketAddr,
    accept_handle: Option<JoinHandle<()>>,
    ticker_handle: Option<JoinHandle<()>>,
    conn_handles: Arc<Mutex<Vec<JoinHandle<()>>>>,
}

impl AlarmServer {
    /// Binds and starts serving. `addr` may use port 0 for an ephemeral port;
    /// the bound address is available from [`AlarmServer::local_addr`].
    pub fn bind(addr: impl ToSocketAddrs, cfg: ServerConfig) -> std::io::Result<Self> {
        let listener = TcpListener::bind(addr)?;
        let addr = listener.local_addr()?;
        let log_file = match &cfg.log_path {
            Some(p) => Some(
                std::fs::OpenOptions::new()
                    .create(true)
                    .append(true)
                    .open(p)?,
            ),
            None => None,
        };
        let hub = Arc::new(Hub {
            cfg,
            running: AtomicBool::new(true),
            next_event_id: AtomicU64::new(1),
            state: Mutex::new(HubState::default()),
            events: Mutex::new(Vec::new()),
            log_file: Mutex::new(log_file),
        });
        let conn_handles = Arc::new(Mutex::new(Vec::new()));

        let accept_hub = Arc::clone(&hub);
        let accept_conns = Arc::clone(&conn_handles);
        let accept_handle = std::thread::spawn(move || {
            for stream in listener.incoming() {
                if !accept_hub.running.load(Ordering::SeqCst) {
                    break;
                }
                let Ok(stream) = stream else { continue };
                let hub = Arc::clone(&accept_hub);
                let handle = std::thread::spawn(move || connection_loop(hub, stream));
                accept_conns.lock().unwrap().push(handle);
            }
        });

        let ticker_hub = Arc::clone(&hub);
        let ticker_handle = std::thread::spawn(move || ticker_loop(ticker_hub));

        Ok(Self {
            hub,
            addr,
            accept_handle: Some(accept_handle),
            ticker_handle: Some(ticker_handle),
            conn_handles,
        })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    /// Snapshot of the in-memory event log.
    pub fn events(&self) -> Vec<LogEntry> {
        self.hub.events.lock().unwrap().clone()
    }

    pub fn stats(&self) -> ServerStats {
        self.hub.state.lock().unwrap().stats
    }

    /// Stops accepting, closes every connection, and joins all threads.
    pub fn stop(mut self) {
        self.shutdown();
    }

    fn shutdown(&mut self) {
        if !self.hub.running.swap(false, Ordering::SeqCst) {
            return;
        }
        // unblock the accept loop
        let _ = TcpStream::connect(self.addr);
        {
            let state = self.hub.state.lock().unwrap();
            for conn in state.conns.values() {
                let _ = conn.shutdown.shutdown(std::net::Shutdown::Both);
            }
        }
        if let Some(h) = self.accept_handle.take() {
            let _ = h.join();
        }
        if let Some(h) = self.ticker_handle.take() {
            let _ = h.join();
        }
        let handles: Vec<_> = std::mem::take(&mut *self.conn_handles.lock().unwrap());
        for h in handles {
            let _ = h.join();
        }
    }
}

impl Drop for AlarmServer {
    fn drop(&mut self) {
        self.shutdown();
    }
}

fn send_line(writer: &Arc<Mutex<TcpStream>>, msg: &Message) -> std::io::Result<()> {
    let mut stream = writer.lock().unwrap();
    stream.write_all(msg.to_line().as_bytes())?;
    stream.flush()
}

/// Sends every pending alarm for `source_id`, ascending by event_id, and
/// logs a delivery attempt for each. Collects the messages under the state
/// lock but writes after releasing it.
fn replay_pending(hub: &Hub, source_id: &str) {
    let (writer, batch) = {
        let state = hub.state.lock().unwrap();
        let Some(rec) = state.responders.get(source_id) else {
            return;
        };
        let Some(conn_id) = rec.conn else { return };
        let Some(conn) = state.conns.get(&conn_id) else {
            return;
        };
        (
            Arc::clone(&conn.writer),
            rec.pending.values().cloned().collect::<Vec<_>>(),
        )
    };
    for msg in batch {
        if let Message::FallAlarm { event_id, .. } = &msg {
            hub.log(LogEntry::Delivery {
                ts_ms: now_ms(),
                event_id: *event_id,
                responder: source_id.to_string(),
            });
        }
        if send_line(&writer, &msg).is_err() {
            break;
        }
    }
}

/// Creates a fall alarm with a fresh event id, queues it for every known
/// responder, and pushes it to the connected ones and to observers.
fn emit_alarm(hub: &Hub, confidence: f64, source_id: &str) {
    let event_id = hub.next_event_id.fetch_add(1, Ordering::SeqCst);
    log::info!("fall alarm {event_id} from {source_id} (confidence {confidence:.3})");
    let msg = Message::FallAlarm {
        event_id,
        ts_ms: now_ms(),
        confidence,
        source_id: source_id.to_string(),
    };
    hub.log(LogEntry::FallAlarm {
        ts_ms: now_ms(),
        event_id,
        source_id: source_id.to_string(),
        confidence,
    });

    let (responder_ids, observers) = {
        let mut state = hub.state.lock().unwrap();
        state.stats.alarms_emitted += 1;
        let mut ids = Vec::new();
        for (id, rec) in state.responders.iter_mut() {
            rec.pending.insert(event_id, msg.clone());
            ids.push(id.clone());
        }
        let observers: Vec<Arc<Mutex<TcpStream>>> = state
            .conns
            .values()
            .filter(|c| c.role == Some(Role::Observer))
            .map(|c| Arc::clone(&c.writer))
            .collect();
        (ids, observers)
    };
    for rid in responder_ids {
        replay_pending(hub, &rid);
    }
    for w in observers {
        let _ = send_line(&w, &msg);
    }
}

fn handle_message(hub: &Hub, conn_id: u64, msg: Message) -> Result<(), String> {
    // any traffic counts as liveness
    {
        let mut state = hub.state.lock().unwrap();
        if let Some(c) = state.conns.get_mut(&conn_id) {
            c.last_seen = Instant::now();
        }
    }

    let (role, source_id) = {
        let state = hub.state.lock().unwrap();
        let c = state.conns.get(&conn_id).ok_or("connection gone")?;
        (c.role, c.source_id.clone())
    };

    match msg {
        Message::Hello { role, source_id } => {
            let writer = {
                let mut state = hub.state.lock().unwrap();
                let c = state.conns.get_mut(&conn_id).ok_or("connection gone")?;
                if c.role.is_some() {
                    return Err("duplicate hello".into());
                }
                c.role = Some(role);
                c.source_id = Some(source_id.clone());
                let writer = Arc::clone(&c.writer);
                match role {
                    Role::Responder => {
                        let rec = state.responders.entry(source_id.clone()).or_default();
                        rec.conn = Some(conn_id);
                    }
                    Role::Sensor => {
                        state.sensors.entry(source_id.clone()).or_default();
                    }
                    Role::Observer => {}
                }
                writer
            };
            if role == Role::Responder {
                // Immediate heartbeat so the responder knows it is
                // registered: alarms raised after this line are queued for
                // it. Sent before any pending replay so it is the first
                // thing a responder ever reads.
                let _ = send_line(&writer, &Message::Heartbeat { ts_ms: now_ms() });
                replay_pending(hub, &source_id);
            }
            Ok(())
        }
        Message::Prediction {
            window_id,
            class,
            confidence,
            ts_ms,
        } => {
            if role != Some(Role::Sensor) {
                return Err("prediction requires a sensor hello".into());
            }
            let source_id = source_id.expect("role implies source_id");
            hub.log(LogEntry::Prediction {
                ts_ms,
                source_id: source_id.clone(),
                window_id,
                class: class.clone(),
                confidence,
            });
            let fired = {
                let mut state = hub.state.lock().unwrap();
                state.stats.predictions_received += 1;
                if hub.cfg.mode == PolicyMode::PolicyInServer {
                    let is_fall = class.eq_ignore_ascii_case(&hub.cfg.fall_class);
                    let policy = hub.cfg.policy.clone();
                    let ps = state.sensors.entry(source_id.clone()).or_default();
                    policy.step_label(ps, is_fall, confidence)
                } else {
                    false
                }
            };
            if fired {
                emit_alarm(hub, confidence, &source_id);
            }
            Ok(())
        }
        Message::FallAlarm { confidence, .. } => {
            if role != Some(Role::Sensor) {
                return Err("fall_alarm requires a sensor hello".into());
            }
            let source_id = source_id.expect("role implies source_id");
            if confidence < hub.cfg.policy.threshold {
                // below-threshold alarms violate the service invariant;
                // refuse without dropping the connection
                let writer = {
                    let state = hub.state.lock().unwrap();
                    state.conns.get(&conn_id).map(|c| Arc::clone(&c.writer))
                };
                if let Some(w) = writer {
                    let _ = send_line(
                        &w,
                        &Message::Error {
                            reason: format!(
                                "alarm confidence {confidence} below threshold {}",
                                hub.cfg.policy.threshold
                            ),
                        },
                    );
                }
                return Ok(());
            }
            emit_alarm(hub, confidence, &source_id);
            Ok(())
        }
        Message::Ack { event_id } => {
            if role != Some(Role::Responder) {
                return Err("ack requires a responder hello".into());
            }
            let source_id = source_id.expect("role implies source_id");
            {
                let mut state = hub.state.lock().unwrap();
                state.stats.acks_received += 1;
                if let Some(rec) = state.responders.get_mut(&source_id) {
                    rec.pending.remove(&event_id);
                    rec.last_ack = rec.last_ack.max(event_id);
                }
            }
            hub.log(LogEntry::Ack {
                ts_ms: now_ms(),
                event_id,
                responder: source_id,
            });
            Ok(())
        }
        Message::Heartbeat { .. } => Ok(()),
        // a client-sent error is informational; nothing to do
        Message::Error { .. } => Ok(()),
    }
}

fn connection_loop(hub: Arc<Hub>, stream: TcpStream) {
    let Ok(write_clone) = stream.try_clone() else {
        return;
    };
    let Ok(shutdown_clone) = stream.try_clone() else {
        return;
    };
    let writer = Arc::new(Mutex::new(write_clone));
    let conn_id = {
        let mut state = hub.state.lock().unwrap();
        let id = state.next_conn;
        state.next_conn += 1;
        state.stats.connections_accepted += 1;
        state.conns.insert(
            id,
            ConnHandle {
                writer: Arc::clone(&writer),
                shutdown: shutdown_clone,
                last_seen: Instant::now(),
                role: None,
                source_id: None,
            },
        );
        id
    };

    let mut reader = BufReader::new(stream);
    let mut line = String::new();
    loop {
        line.clear();
        match reader.read_line(&mut line) {
            Ok(0) | Err(_) => break,
            Ok(_) => {}
        }
        if line.trim().is_empty() {
            continue;
        }
        let outcome = match Message::parse(&line) {
            Ok(msg) => handle_message(&hub, conn_id, msg),
            Err(e) => {
                hub.state.lock().unwrap().stats.malformed_messages += 1;
                Err(e.to_string())
            }
        };
        if let Err(reason) = outcome {
            // protocol violation: tell the peer why and close only this
            // connection
            log::warn!("closing connection {conn_id}: {reason}");
            let _ = send_line(&writer, &Message::Error { reason });
            break;
        }
    }
    log::debug!("connection {conn_id} closed");

    let mut state = hub.state.lock().unwrap();
    if let Some(conn) = state.conns.remove(&conn_id) {
        let _ = conn.shutdown.shutdown(std::net::Shutdown::Both);
        if let Some(sid) = conn.source_id {
            if let Some(rec) = state.responders.get_mut(&sid) {
                if rec.conn == Some(conn_id) {
                    rec.conn = None;
                }
            }
        }
    }
}

fn ticker_loop(hub: Arc<Hub>) {
    let tick = hub
        .cfg
        .retry_interval
        .min(hub.cfg.heartbeat_interval)
        .min(Duration::from_millis(50))
        .max(Duration::from_millis(1));
    let mut last_retry = Instant::now();
    let mut last_heartbeat = Instant::now();
    while hub.running.load(Ordering::SeqCst) {
        std::thread::sleep(tick);
        let now = Instant::now();

        if now.duration_since(last_retry) >= hub.cfg.retry_interval {
            last_retry = now;
            let ids: Vec<String> = {
                let state = hub.state.lock().unwrap();
                state
                    .responders
                    .iter()
                    .filter(|(_, r)| r.conn.is_some() && !r.pending.is_empty())
                    .map(|(id, _)| id.clone())
                    .collect()
            };
            for id in ids {
                replay_pending(&hub, &id);
            }
        }

        if now.duration_since(last_heartbeat) >= hub.cfg.heartbeat_interval {
            last_heartbeat = now;
            let beat = Message::Heartbeat { ts_ms: now_ms() };
            let stale_after = hub.cfg.heartbeat_interval * 3;
            let (writers, stale): (Vec<_>, Vec<_>) = {
                let state = hub.state.lock().unwrap();
                // Only connections that have identified themselves get the
                // periodic beat: a responder can then take its first
                // heartbeat as proof its hello was processed.
                let writers = state
                    .conns
                    .values()
                    .filter(|c| c.role.is_some())
                    .map(|c| Arc::clone(&c.writer))
                    .collect();
                let stale = state
                    .conns
                    .iter()
                    .filter(|(_, c)| now.duration_since(c.last_seen) > stale_after)
                    .map(|(id, _)| *id)
                    .collect();
                (writers, stale)
            };
            for w in writers {
                let _ = send_line(&w, &beat);
            }
            // three missed heartbeats: shut the socket, the connection
            // thread cleans up
            let state = hub.state.lock().unwrap();
            for id in stale {
                if let Some(c) = state.conns.get(&id) {
                    let _ = c.shutdown.shutdown(std::net::Shutdown::Both);
                }
            }
        }
    }
}
