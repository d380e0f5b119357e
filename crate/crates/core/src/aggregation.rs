//! Monitored functions and the accumulator algebra used to fold child
//! aggregates into a node's own observation.
//!
//! An [`AggState`] is an `(outcome, observations)` pair. Averages are carried
//! as `(mean, count)` so the pair maps one-to-one onto the `outcome` and
//! `observations` fields of an aggregate packet; [`combine`] re-weights.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// The function the root asks the network to compute.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum MonitorFunction {
    #[serde(rename = "AVG_CPU")]
    AvgCpu,
    #[serde(rename = "AVG_RAM")]
    AvgRam,
    #[serde(rename = "SUM")]
    Sum,
    #[serde(rename = "COUNT")]
    Count,
    #[serde(rename = "MIN")]
    Min,
    #[serde(rename = "MAX")]
    Max,
}

impl MonitorFunction {
    pub const ALL: [MonitorFunction; 6] = [
        MonitorFunction::AvgCpu,
        MonitorFunction::AvgRam,
        MonitorFunction::Sum,
        MonitorFunction::Count,
        MonitorFunction::Min,
        MonitorFunction::Max,
    ];

    pub fn token(self) -> &'static str {
        match self {
            MonitorFunction::AvgCpu => "AVG_CPU",
            MonitorFunction::AvgRam => "AVG_RAM",
            MonitorFunction::Sum => "SUM",
            MonitorFunction::Count => "COUNT",
            MonitorFunction::Min => "MIN",
            MonitorFunction::Max => "MAX",
        }
    }

    pub fn is_average(self) -> bool {
        matches!(self, MonitorFunction::AvgCpu | MonitorFunction::AvgRam)
    }
}

impl fmt::Display for MonitorFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.token())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unknown monitor function {0:?}")]
pub struct UnknownFunction(pub String);

impl FromStr for MonitorFunction {
    type Err = UnknownFunction;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        MonitorFunction::ALL
            .into_iter()
            .find(|f| f.token() == s)
            .ok_or_else(|| UnknownFunction(s.to_string()))
    }
}

/// Per-node sensor readings. Which one feeds a given function is decided by
/// [`NodeMetrics::reading`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NodeMetrics {
    pub cpu: f64,
    pub ram: f64,
    pub value: f64,
}

impl NodeMetrics {
    pub fn uniform(v: f64) -> Self {
        NodeMetrics { cpu: v, ram: v, value: v }
    }

    pub fn reading(&self, f: MonitorFunction) -> f64 {
        match f {
            MonitorFunction::AvgCpu => self.cpu,
            MonitorFunction::AvgRam => self.ram,
            MonitorFunction::Sum | MonitorFunction::Min | MonitorFunction::Max => self.value,
            MonitorFunction::Count => 1.0,
        }
    }
}

/// Aggregation accumulator. `observations == 0` is the identity element.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AggState {
    pub outcome: f64,
    pub observations: u64,
}

impl AggState {
    pub const EMPTY: AggState = AggState { outcome: 0.0, observations: 0 };

    pub fn is_empty(&self) -> bool {
        self.observations == 0
    }
}

impl Default for AggState {
    fn default() -> Self {
        AggState::EMPTY
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum AggError {
    #[error("aggregate has no observations")]
    EmptyAggregate,
}

pub fn local_observe(f: MonitorFunction, node_metric: f64) -> AggState {
    let outcome = match f {
        MonitorFunction::Count => 1.0,
        _ => node_metric,
    };
    AggState { outcome, observations: 1 }
}

pub fn combine(f: MonitorFunction, a: AggState, b: AggState) -> AggState {
    if a.is_empty() {
        return b;
    }
    if b.is_empty() {
        return a;
    }
    let observations = a.observations + b.observations;
    let outcome = match f {
        MonitorFunction::AvgCpu | MonitorFunction::AvgRam => {
            (a.outcome * a.observations as f64 + b.outcome * b.observations as f64)
                / observations as f64
        }
        MonitorFunction::Sum | MonitorFunction::Count => a.outcome + b.outcome,
        MonitorFunction::Min => a.outcome.min(b.outcome),
        MonitorFunction::Max => a.outcome.max(b.outcome),
    };
    AggState { outcome, observations }
}

/// Folds any number of states with [`combine`], starting from the identity.
pub fn combine_all<I>(f: MonitorFunction, states: I) -> AggState
where
    I: IntoIterator<Item = AggState>,
{
    states.into_iter().fold(AggState::EMPTY, |acc, s| combine(f, acc, s))
}

pub fn finalize(_f: MonitorFunction, s: AggState) -> Result<f64, AggError> {
    if s.is_empty() {
        return Err(AggError::EmptyAggregate);
    }
    Ok(s.outcome)
}
