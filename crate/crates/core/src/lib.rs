//! Map-based traffic light perception: ray casting of detections,
//! globally optimal association with HD-map lights, temporally smoothed
//! signal-group decisions, and a deterministic scenario simulator.

pub mod association;
pub mod decision;
pub mod error;
pub mod geometry;
pub mod hdmap;
pub mod ingest;
pub mod scenarios;
pub mod simulator;

pub use error::{Error, ErrorKind, Result};
