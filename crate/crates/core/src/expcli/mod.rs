//! Orchestration: configuration, checkpoints, the experiment protocol and
//! the command-line front end.

pub mod artifacts;
pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod projection;
pub mod protocol;

pub use config::{ExperimentConfig, Mode};
pub use protocol::{run_protocol, Method, ProtocolReport};
