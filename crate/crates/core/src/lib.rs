//! Decentralized network monitoring over mobile ad hoc networks.
//!
//! A root floods a monitoring query that builds a transient parent/child
//! hierarchy; partial aggregates fold back up the hierarchy, with gossip
//! routing and relay-set forwarding to recover from broken links. The
//! protocol automaton is pure and driven by a deterministic discrete-event
//! simulator.

pub mod aggregation;
pub mod metrics;
pub mod mobility;
pub mod protocol;
pub mod routing;
pub mod runner;
pub mod sim;
pub mod wire;

pub use aggregation::{AggState, MonitorFunction, NodeMetrics};
pub use metrics::{reduce, summarize, MetricsReport, SummaryRow};
pub use protocol::{step, Action, AutomatonState, Event, NodeProtocolState};
pub use sim::{run, ScenarioConfig, SimTrace};
pub use wire::{decode_packet, encode_packet, Address, MonitoringPacket, PacketType};
