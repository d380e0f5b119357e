//! Trace reductions: convergence time, accuracy and packet statistics, plus
//! per-cell summaries written as CSV.

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::protocol::ErrorCode;
use crate::sim::{RecordKind, ScenarioConfig, SimTrace};
use crate::wire::PacketType;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    /// `None` when the root never returned a verdict.
    pub convergence_time_ms: Option<u64>,
    pub observations: u64,
    pub node_count: usize,
    pub accuracy: f64,
    pub packets_sent: u64,
    pub bytes_sent: u64,
    pub mean_packet_bytes: f64,
    pub packets_by_type: BTreeMap<PacketType, u64>,
    pub errors: BTreeMap<ErrorCode, u64>,
}

/// Reduces a finished trace. Only the first verdict counts.
pub fn reduce(trace: &SimTrace, node_count: usize) -> MetricsReport {
    let mut started = None;
    let mut verdict = None;
    let mut packets_sent = 0u64;
    let mut bytes_sent = 0u64;
    let mut packets_by_type = BTreeMap::new();
    let mut errors = BTreeMap::new();
    for r in trace.iter() {
        match &r.kind {
            RecordKind::MonitoringStarted => {
                started.get_or_insert(r.t);
            }
            RecordKind::Verdict { observations, .. } => {
                if verdict.is_none() {
                    verdict = Some((r.t, *observations));
                }
            }
            RecordKind::Sent { packet_type, bytes, .. } => {
                packets_sent += 1;
                bytes_sent += *bytes as u64;
                *packets_by_type.entry(*packet_type).or_insert(0) += 1;
            }
            RecordKind::Error { code } => *errors.entry(*code).or_insert(0) += 1,
            _ => {}
        }
    }
    let (convergence_time_ms, observations) = match verdict {
        Some((t, obs)) if obs > 0 => (Some(t - started.unwrap_or(0)), obs),
        _ => (None, 0),
    };
    let accuracy =
        if node_count == 0 { 0.0 } else { (observations as f64 / node_count as f64).min(1.0) };
    MetricsReport {
        convergence_time_ms,
        observations,
        node_count,
        accuracy,
        packets_sent,
        bytes_sent,
        mean_packet_bytes: if packets_sent == 0 {
            0.0
        } else {
            bytes_sent as f64 / packets_sent as f64
        },
        packets_by_type,
        errors,
    }
}

/// One CSV row: a scenario cell summarized over its replications.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub scenario: String,
    pub nodes: usize,
    pub area: String,
    pub speed: f64,
    pub mobility: String,
    pub routing: String,
    pub runs: usize,
    pub mean_convergence_ms: Option<f64>,
    pub sd_convergence_ms: Option<f64>,
    pub mean_observations: f64,
    pub mean_accuracy: f64,
    pub mean_packets: f64,
    pub mean_packet_bytes: f64,
    pub failure_rate: f64,
}

fn mean(xs: &[f64]) -> Option<f64> {
    (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64)
}

/// Sample standard deviation; zero for a single value.
fn sample_sd(xs: &[f64]) -> Option<f64> {
    let m = mean(xs)?;
    if xs.len() < 2 {
        return Some(0.0);
    }
    let ss: f64 = xs.iter().map(|x| (x - m).powi(2)).sum();
    Some((ss / (xs.len() - 1) as f64).sqrt())
}

/// Convergence statistics cover converged runs only; every other column
/// averages over all runs, failed ones included.
pub fn summarize(config: &ScenarioConfig, reports: &[MetricsReport]) -> SummaryRow {
    let conv: Vec<f64> =
        reports.iter().filter_map(|r| r.convergence_time_ms).map(|t| t as f64).collect();
    let all = |f: fn(&MetricsReport) -> f64| -> f64 {
        mean(&reports.iter().map(f).collect::<Vec<_>>()).unwrap_or(0.0)
    };
    let failures = reports.iter().filter(|r| r.convergence_time_ms.is_none()).count();
    SummaryRow {
        scenario: config.name.clone(),
        nodes: config.node_count,
        area: config.area.to_string(),
        speed: config.speed,
        mobility: config.mobility.to_string(),
        routing: config.routing.to_string(),
        runs: reports.len(),
        mean_convergence_ms: mean(&conv),
        sd_convergence_ms: sample_sd(&conv),
        mean_observations: all(|r| r.observations as f64),
        mean_accuracy: all(|r| r.accuracy),
        mean_packets: all(|r| r.packets_sent as f64),
        mean_packet_bytes: all(|r| r.mean_packet_bytes),
        failure_rate: if reports.is_empty() {
            0.0
        } else {
            failures as f64 / reports.len() as f64
        },
    }
}

pub const CSV_COLUMNS: [&str; 14] = [
    "scenario",
    "nodes",
    "area",
    "speed",
    "mobility",
    "routing",
    "runs",
    "mean_convergence_ms",
    "sd_convergence_ms",
    "mean_observations",
    "mean_accuracy",
    "mean_packets",
    "mean_packet_bytes",
    "failure_rate",
];

/// Incremental CSV writer; the header goes out on construction.
pub struct SummaryWriter<W: Write> {
    inner: csv::Writer<W>,
}

impl<W: Write> SummaryWriter<W> {
    pub fn new(out: W) -> csv::Result<Self> {
        let mut inner = csv::WriterBuilder::new().has_headers(false).from_writer(out);
        inner.write_record(CSV_COLUMNS)?;
        inner.flush()?;
        Ok(SummaryWriter { inner })
    }

    pub fn write_row(&mut self, row: &SummaryRow) -> csv::Result<()> {
        self.inner.serialize(row)?;
        self.inner.flush()?;
        Ok(())
    }

    pub fn into_inner(self) -> Result<W, csv::Error> {
        self.inner.into_inner().map_err(|e| csv::Error::from(e.into_error()))
    }
}

pub fn write_csv<W: Write>(rows: &[SummaryRow], out: W) -> csv::Result<()> {
    let mut w = SummaryWriter::new(out)?;
    for row in rows {
        w.write_row(row)?;
    }
    Ok(())
}

pub fn write_csv_file(rows: &[SummaryRow], path: &std::path::Path) -> csv::Result<()> {
    write_csv(rows, std::fs::File::create(path)?)
}
