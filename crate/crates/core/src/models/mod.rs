//! Benchmark model generators: stochastic PID controller tuning and a
//! stochastic natural gas pipeline network.

mod demand;
mod gas;
mod pid;

pub use demand::{demand_csv, demand_profile, step_profile, DemandConfig};
pub use gas::{build_gas, default_chain, Element, GasConfig};
pub use pid::{build_pid, pid_time_partition, NodeOrdering, PidConfig};

use thiserror::Error;

use crate::graph::GraphError;

/// Label of the node holding first-stage variables in both generators.
pub const MASTER_LABEL: &str = "master";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("invalid topology: {0}")]
    Topology(String),
    #[error("node {0:?} does not carry a time index")]
    MissingTimeIndex(String),
    #[error(transparent)]
    Graph(#[from] GraphError),
}
