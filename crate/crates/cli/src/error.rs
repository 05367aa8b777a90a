//! Error-to-exit-code mapping. The codes are part of the CLI contract:
//! 0 ok, 1 usage, 2 input/parse error, 3 numerical failure, 4 network
//! failure — scripts depend on them staying put.

use std::fmt;

use fallwatch_core::har::HarError;
use fallwatch_core::ingest::IngestError;
use fallwatch_net::NetError;
use fallwatch_sim::SimError;

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Input(String),
    Numerical(String),
    Network(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Input(_) => 2,
            CliError::Numerical(_) => 3,
            CliError::Network(_) => 4,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m)
            | CliError::Input(m)
            | CliError::Numerical(m)
            | CliError::Network(m) => write!(f, "{m}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<IngestError> for CliError {
    fn from(e: IngestError) -> Self {
        CliError::Input(e.to_string())
    }
}

impl From<HarError> for CliError {
    fn from(e: HarError) -> Self {
        match e {
            HarError::Numerical(_) | HarError::Nn(_) => CliError::Numerical(e.to_string()),
            _ => CliError::Input(e.to_string()),
        }
    }
}

impl From<NetError> for CliError {
    fn from(e: NetError) -> Self {
        CliError::Network(e.to_string())
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        match e {
            SimError::Net(_) | SimError::Live(_) => CliError::Network(e.to_string()),
            _ => CliError::Input(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Input(e.to_string())
    }
}
