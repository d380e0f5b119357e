//! Seeded replications of one scenario cell.
//!
//! With the `parallel` feature (default), replications run on the rayon
//! pool; otherwise they run in order on the calling thread. Output is
//! always ordered by replication index, so both paths produce the same
//! values.

use crate::metrics::{reduce, MetricsReport};
use crate::sim::{run_setup, ConfigError, ScenarioConfig, SimSetup, SimTrace};

#[derive(Debug, Clone, PartialEq)]
pub struct Replication {
    pub index: u32,
    pub seed: u64,
    pub report: MetricsReport,
    /// Kept only when requested.
    pub trace: Option<SimTrace>,
}

fn replicate(config: &ScenarioConfig, index: u32, keep_trace: bool) -> Result<Replication, ConfigError> {
    let seed = config.replication_seed(index);
    let cfg = config.with_seed(seed);
    let trace = run_setup(SimSetup::from_config(&cfg)?);
    let report = reduce(&trace, cfg.node_count);
    Ok(Replication { index, seed, report, trace: keep_trace.then_some(trace) })
}

pub fn run_sequential(config: &ScenarioConfig, keep_traces: bool) -> Result<Vec<Replication>, ConfigError> {
    config.validate()?;
    (0..config.replications).map(|i| replicate(config, i, keep_traces)).collect()
}

#[cfg(feature = "parallel")]
pub fn run_parallel(config: &ScenarioConfig, keep_traces: bool) -> Result<Vec<Replication>, ConfigError> {
    use rayon::prelude::*;
    config.validate()?;
    (0..config.replications)
        .into_par_iter()
        .map(|i| replicate(config, i, keep_traces))
        .collect()
}

/// Parallel when the feature is enabled, sequential otherwise.
pub fn run_replications(config: &ScenarioConfig, keep_traces: bool) -> Result<Vec<Replication>, ConfigError> {
    #[cfg(feature = "parallel")]
    {
        run_parallel(config, keep_traces)
    }
    #[cfg(not(feature = "parallel"))]
    {
        run_sequential(config, keep_traces)
    }
}

/// Maps `f` over `items`, in parallel when the feature is enabled. Results
/// keep input order.
pub fn map_ordered<T, U, F>(items: Vec<T>, f: F) -> Vec<U>
where
    T: Send,
    U: Send,
    F: Fn(T) -> U + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        items.into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        items.into_iter().map(f).collect()
    }
}
