//! Core library for the fall-detection pipeline: channel-state data model,
//! trace ingestion, deterministic tensor autograd, and the two-stream
//! activity classifier built on top of it.
//!
//! Everything here is bit-deterministic for a fixed seed: random state comes
//! from [`rng::DetRng`], and the parallel compute backend partitions work so
//! that results match the sequential path exactly.

pub mod csi;
pub mod har;
pub mod ingest;
pub mod nn;
pub mod rng;
pub mod verify;
