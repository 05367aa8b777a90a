//! Wire protocol: one JSON object per line, UTF-8, tagged by `type`.

use serde::{Deserialize, Serialize};
use std::io::{BufRead, Write};
use std::time::{SystemTime, UNIX_EPOCH};

use super::NetError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Sensor,
    Responder,
    Observer,
}

impl std::fmt::Display for Role {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Role::Sensor => write!(f, "sensor"),
            Role::Responder => write!(f, "responder"),
            Role::Observer => write!(f, "observer"),
        }
    }
}

/// Every message that can cross the socket. Field names and the lowercase
/// `type` tag are the wire contract; changing them breaks clients.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum Message {
    Hello {
        role: Role,
        source_id: String,
    },
    Prediction {
        window_id: u64,
        class: String,
        confidence: f64,
        ts_ms: i64,
    },
    FallAlarm {
        event_id: u64,
        ts_ms: i64,
        confidence: f64,
        source_id: String,
    },
    Ack {
        event_id: u64,
    },
    Heartbeat {
        ts_ms: i64,
    },
    Error {
        reason: String,
    },
}

impl Message {
    pub fn to_line(&self) -> String {
        let mut s = serde_json::to_string(self).expect("message serialization cannot fail");
        s.push('\n');
        s
    }

    pub fn parse(line: &str) -> Result<Self, NetError> {
        serde_json::from_str(line.trim_end())
            .map_err(|e| NetError::Protocol(format!("bad message {:?}: {e}", truncate(line))))
    }
}

fn truncate(line: &str) -> &str {
    let line = line.trim_end();
    &line[..line.len().min(120)]
}

/// Milliseconds since the Unix epoch.
pub fn now_ms() -> i64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as i64)
        .unwrap_or(0)
}

/// Writes one message as a line and flushes, so it is visible to the peer
/// immediately.
pub fn write_message(w: &mut impl Write, msg: &Message) -> std::io::Result<()> {
    w.write_all(msg.to_line().as_bytes())?;
    w.flush()
}

/// Reads one line and parses it. `Ok(None)` on a clean EOF.
pub fn read_message(r: &mut impl BufRead) -> Result<Option<Message>, NetError> {
    let mut line = String::new();
    if r.read_line(&mut line)? == 0 {
        return Ok(None);
    }
    Message::parse(&line).map(Some)
}
