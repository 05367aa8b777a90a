//! Alarm dispatch service: sensors stream window predictions over TCP as
//! newline-delimited JSON, the service debounces them into fall alarms and
//! fans the alarms out to responders with at-least-once delivery.

pub mod client;
pub mod latency;
pub mod protocol;
pub mod server;

pub use client::{ResponderClient, SensorClient};
pub use protocol::{Message, Role};
pub use server::{AlarmServer, PolicyMode, ServerConfig};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum NetError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("timed out waiting for {0}")]
    Timeout(String),
}
