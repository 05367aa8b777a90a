//! Client helpers for the alarm service: a sensor that streams predictions
//! and a responder that receives alarms, acknowledges, and deduplicates.

use super::protocol::{now_ms, Message, Role};
use super::NetError;
use std::collections::HashSet;
use std::io::{BufReader, ErrorKind, Read, Write};
use std::net::{TcpStream, ToSocketAddrs};
use std::time::{Duration, Instant};

fn connect_with_hello(
    addr: impl ToSocketAddrs,
    role: Role,
    source_id: &str,
) -> Result<(TcpStream, BufReader<TcpStream>), NetError> {
    let stream = TcpStream::connect(addr)?;
    stream.set_nodelay(true)?;
    let reader = BufReader::new(stream.try_clone()?);
    let mut writer = stream;
    let hello = Message::Hello {
        role,
        source_id: source_id.to_string(),
    };
    writer.write_all(hello.to_line().as_bytes())?;
    writer.flush()?;
    Ok((writer, reader))
}

/// Reads one message with a deadline. Partial lines survive timeouts because
/// bytes accumulate in the same buffer across calls.
fn read_with_deadline(
    reader: &mut BufReader<TcpStream>,
    line: &mut Vec<u8>,
    deadline: Instant,
) -> Result<Option<Message>, NetError> {
    loop {
        let remaining = deadline.saturating_duration_since(Instant::now());
        if remaining.is_zero() {
            return Err(NetError::Timeout("message".into()));
        }
        reader
            .get_ref()
            .set_read_timeout(Some(remaining.max(Duration::from_millis(1))))?;
        match read_line_once(reader, line) {
            Ok(0) => return Ok(None),
            Ok(_) => {
                let text = String::from_utf8(std::mem::take(line))
                    .map_err(|e| NetError::Protocol(format!("non-UTF-8 line: {e}")))?;
                return Message::parse(&text).map(Some);
            }
            Err(e) if e.kind() == ErrorKind::WouldBlock || e.kind() == ErrorKind::TimedOut => {
                continue;
            }
            Err(e) => return Err(e.into()),
        }
    }
}

/// Byte-at-a-time line read on top of the BufReader's buffer; keeps already
/// read bytes in `line` when the socket times out mid-line.
fn read_line_once(reader: &mut BufReader<TcpStream>, line: &mut Vec<u8>) -> std::io::Result<usize> {
    let mut byte = [0u8; 1];
    loop {
        match reader.read(&mut byte) {
            Ok(0) => return Ok(if line.is_empty() { 0 } else { line.len() }),
            Ok(_) => {
                line.push(byte[0]);
                if byte[0] == b'\n' {
                    return Ok(line.len());
                }
            }
            Err(e) => return Err(e),
        }
    }
}

pub struct SensorClient {
    writer: TcpStream,
    reader: BufReader<TcpStream>,
    line: Vec<u8>,
    pub source_id: String,
}

impl SensorClient {
    pub fn connect(addr: impl ToSocketAddrs, source_id: &str) -> Result<Self, NetError> {
        let (writer, reader) = connect_with_hello(addr, Role::Sensor, source_id)?;
        Ok(Self {
            writer,
            reader,
            line: Vec::new(),
            source_id: source_id.to_string(),
        })
    }

    fn send(&mut self, msg: &Message) -> Result<(), NetError> {
        self.writer.write_all(msg.to_line().as_bytes())?;
        self.writer.flush()?;
        Ok(())
    }

    pub fn send_prediction(
        &mut self,
        window_id: u64,
        class: &str,
        confidence: f64,
        ts_ms: i64,
    ) -> Result<(), NetError> {
        self.send(&Message::Prediction {
            window_id,
            class: class.to_string(),
            confidence,
            ts_ms,
        })
    }

    /// Passthrough-mode alarm; the server assigns the real event id.
    pub fn send_alarm(&mut self, confidence: f64) -> Result<(), NetError> {
        self.send(&Message::FallAlarm {
            event_id: 0,
            ts_ms: now_ms(),
            confidence,
            source_id: self.source_id.clone(),
        })
    }

    pub fn send_heartbeat(&mut self) -> Result<(), NetError> {
        self.send(&Message::Heartbeat { ts_ms: now_ms() })
    }

    /// Next message from the server within `timeout`, if any. `Ok(None)`
    /// means the server closed the connection.
    pub fn recv(&mut self, timeout: Duration) -> Result<Option<Message>, NetError> {
        read_with_deadline(&mut self.reader, &mut self.line, Instant::now() + timeout)
    }
}

/// A received, deduplicated alarm.
#[derive(Clone, Debug, PartialEq)]
pub struct ReceivedAlarm {
    pub event_id: u64,
    pub ts_ms: i64,
    pub confidence: f64,
    pub source_id: String,
}

pub struct ResponderClient {
    writer: TcpStream,
    reader: BufReader<TcpStream>,
    line: Vec<u8>,
    seen: HashSet<u64>,
    pub source_id: String,
    /// Redeliveries observed (acked again, surfaced to no one).
    pub duplicates: u64,
    /// When false, alarms are received and deduplicated but never acked;
    /// used to exercise the retry path.
    pub auto_ack: bool,
}

impl ResponderClient {
    pub fn connect(addr: impl ToSocketAddrs, source_id: &str) -> Result<Self, NetError> {
        let (writer, reader) = connect_with_hello(addr, Role::Responder, source_id)?;
        let mut client = Self {
            writer,
            reader,
            line: Vec::new(),
            seen: HashSet::new(),
            source_id: source_id.to_string(),
            duplicates: 0,
            auto_ack: true,
        };
        // The server answers a responder hello with an immediate heartbeat
        // once the registration is in place; block on it so that by the
        // time connect returns, alarms can no longer miss this responder.
        let deadline = Instant::now() + Duration::from_secs(5);
        loop {
            match read_with_deadline(&mut client.reader, &mut client.line, deadline) {
                Ok(Some(Message::Heartbeat { .. })) => {
                    client.send(&Message::Heartbeat { ts_ms: now_ms() })?;
                    return Ok(client);
                }
                Ok(Some(Message::Error { reason })) => {
                    return Err(NetError::Protocol(format!("server error: {reason}")));
                }
                // An alarm can squeeze in ahead of the welcome if it fires
                // between registration and the welcome write. Leave it
                // unacked; the at-least-once retry redelivers it to
                // recv_alarm.
                Ok(Some(_)) => continue,
                Ok(None) => {
                    return Err(NetError::Protocol(
                        "server closed the connection during registration".into(),
                    ));
                }
                Err(e) => return Err(e),
            }
        }
    }

    fn send(&mut self, msg: &Message) -> Result<(), NetError> {
        self.writer.write_all(msg.to_line().as_bytes())?;
        self.writer.flush()?;
        Ok(())
    }

    pub fn ack(&mut self, event_id: u64) -> Result<(), NetError> {
        self.send(&Message::Ack { event_id })
    }

    /// Waits up to `timeout` for an alarm this responder has not seen
    /// before. Heartbeats are answered, redeliveries are acked and counted
    /// as duplicates. `Ok(None)` on timeout or server close.
    pub fn recv_alarm(&mut self, timeout: Duration) -> Result<Option<ReceivedAlarm>, NetError> {
        let deadline = Instant::now() + timeout;
        loop {
            let msg = match read_with_deadline(&mut self.reader, &mut self.line, deadline) {
                Ok(Some(m)) => m,
                Ok(None) => return Ok(None),
                Err(NetError::Timeout(_)) => return Ok(None),
                Err(e) => return Err(e),
            };
            match msg {
                Message::FallAlarm {
                    event_id,
                    ts_ms,
                    confidence,
                    source_id,
                } => {
                    if self.auto_ack {
                        self.ack(event_id)?;
                    }
                    if self.seen.insert(event_id) {
                        return Ok(Some(ReceivedAlarm {
                            event_id,
                            ts_ms,
                            confidence,
                            source_id,
                        }));
                    }
                    self.duplicates += 1;
                }
                Message::Heartbeat { .. } => {
                    self.send(&Message::Heartbeat { ts_ms: now_ms() })?;
                }
                Message::Error { reason } => {
                    return Err(NetError::Protocol(format!("server error: {reason}")));
                }
                _ => {}
            }
        }
    }

    /// Collects every distinct alarm that arrives within `window`.
    pub fn drain_alarms(&mut self, window: Duration) -> Result<Vec<ReceivedAlarm>, NetError> {
        let deadline = Instant::now() + window;
        let mut out = Vec::new();
        loop {
            let remaining = deadline.saturating_duration_since(Instant::now());
            if remaining.is_zero() {
                return Ok(out);
            }
            match self.recv_alarm(remaining)? {
                Some(a) => out.push(a),
                None => return Ok(out),
            }
        }
    }

    pub fn seen_count(&self) -> usize {
        self.seen.len()
    }
}
