//! The two-stream activity classifier: model assembly, training, transfer,
//! evaluation, streaming decision policy, and checkpoint storage.

pub mod checkpoint;
pub mod eval;
pub mod export;
pub mod model;
pub mod policy;
pub mod split;
pub mod train;

pub use checkpoint::ModelCheckpoint;
pub use model::{ModelConfig, TwoStreamModel};
pub use policy::DecisionPolicy;

use crate::nn::NnError;
use std::path::PathBuf;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid data: {0}")]
    InvalidData(String),
}
