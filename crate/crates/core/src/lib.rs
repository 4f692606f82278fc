//! TTI-level simulator of a sliced V2X highway downlink.
//!
//! Video streams from roadside units over the 2 GHz band; safety messages are
//! relayed by elected slice leaders over the 5.9 GHz sidelink. Vehicles are
//! grouped by spectral clustering of their positions, and two baselines
//! (RSU-only, and RSU with SINR-triggered offloading) serve as references.

pub mod channel;
pub mod config;
pub mod mac;
pub mod metrics;
pub mod mobility;
pub mod rng;
pub mod sim;
pub mod slicing;
pub mod traffic;

pub use config::{ConfigError, Mode, Scenario, SimConfig};
pub use metrics::{summarize, write_outputs, MetricsReport, Summary};
pub use sim::{run_simulation, run_with_topology, NetworkState, SimError, StepTrace};
pub use slicing::TopologyAssignment;
pub use traffic::{FlowId, Slice};
