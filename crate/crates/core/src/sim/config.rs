use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::aggregation::MonitorFunction;
use crate::mobility::{Area, MobilityModel};
use crate::protocol::DEFAULT_TIMEOUT_MS;
use crate::routing::RoutingBackend;

/// Unit-disk radio.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RadioModel {
    pub range_m: f64,
    pub propagation_delay_ms: u64,
    pub loss_probability: f64,
}

impl Default for RadioModel {
    fn default() -> Self {
        RadioModel { range_m: 125.0, propagation_delay_ms: 1, loss_probability: 0.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum RootSelection {
    /// Drawn from the placement stream.
    #[default]
    Random,
    Index(usize),
}

/// A node that disappears from the network at `at_ms`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeFailure {
    pub node: usize,
    pub at_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    pub node_count: usize,
    pub area: Area,
    pub mobility: MobilityModel,
    /// Meters per second; ignored for static placements.
    pub speed: f64,
    pub radio: RadioModel,
    pub function: MonitorFunction,
    pub timeout_ms: u64,
    pub routing: RoutingBackend,
    pub root: RootSelection,
    pub duration_ms: u64,
    pub seed: u64,
    pub replications: u32,
    /// Redraw placements until the initial unit-disk graph is connected.
    pub require_connected: bool,
    pub tick_ms: u64,
    pub snapshot_period_ms: u64,
    /// Hop budget for routed packets; `None` means three times the node count.
    pub max_hops: Option<u32>,
    pub failures: Vec<NodeFailure>,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            name: "scenario".into(),
            node_count: 25,
            area: Area { width: 350.0, height: 350.0 },
            mobility: MobilityModel::Waypoint,
            speed: 5.0,
            radio: RadioModel::default(),
            function: MonitorFunction::AvgCpu,
            timeout_ms: DEFAULT_TIMEOUT_MS,
            routing: RoutingBackend::Gossip,
            root: RootSelection::Random,
            duration_ms: 60_000,
            seed: 1,
            replications: 1,
            require_connected: false,
            tick_ms: 100,
            snapshot_period_ms: 1000,
            max_hops: None,
            failures: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConfigError {
    #[error("node_count must be at least 2, got {0}")]
    NodeCount(usize),
    #[error("duration_ms must be positive")]
    Duration,
    #[error("area dimensions must be positive and finite")]
    Area,
    #[error("speed must be positive for mobile models, got {0}")]
    Speed(f64),
    #[error("radio range must be positive")]
    Range,
    #[error("loss_probability must lie in [0, 1], got {0}")]
    Loss(f64),
    #[error("timeout_ms must be positive")]
    Timeout,
    #[error("tick_ms and snapshot_period_ms must be positive")]
    Period,
    #[error("replications must be at least 1")]
    Replications,
    #[error("root index {0} is out of range")]
    RootIndex(usize),
    #[error("failure names node {0}, which is out of range")]
    FailureIndex(usize),
    #[error("could not draw a connected placement after {0} attempts")]
    Disconnected(u32),
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.node_count < 2 {
            return Err(ConfigError::NodeCount(self.node_count));
        }
        if self.duration_ms == 0 {
            return Err(ConfigError::Duration);
        }
        if Area::new(self.area.width, self.area.height).is_none() {
            return Err(ConfigError::Area);
        }
        if self.mobility != MobilityModel::Static && !(self.speed > 0.0 && self.speed.is_finite())
        {
            return Err(ConfigError::Speed(self.speed));
        }
        if self.radio.range_m.is_nan() || self.radio.range_m <= 0.0 {
            return Err(ConfigError::Range);
        }
        if !(0.0..=1.0).contains(&self.radio.loss_probability) {
            return Err(ConfigError::Loss(self.radio.loss_probability));
        }
        if self.timeout_ms == 0 {
            return Err(ConfigError::Timeout);
        }
        if self.tick_ms == 0 || self.snapshot_period_ms == 0 {
            return Err(ConfigError::Period);
        }
        if self.replications == 0 {
            return Err(ConfigError::Replications);
        }
        if let RootSelection::Index(i) = self.root {
            if i >= self.node_count {
                return Err(ConfigError::RootIndex(i));
            }
        }
        if let Some(f) = self.failures.iter().find(|f| f.node >= self.node_count) {
            return Err(ConfigError::FailureIndex(f.node));
        }
        Ok(())
    }

    pub fn max_hops(&self) -> u32 {
        self.max_hops.unwrap_or(3 * self.node_count as u32)
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        ScenarioConfig { seed, ..self.clone() }
    }

    /// Seed of replication `index`.
    pub fn replication_seed(&self, index: u32) -> u64 {
        self.seed.wrapping_add(index as u64)
    }
}
