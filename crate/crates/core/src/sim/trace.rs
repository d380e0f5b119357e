//! Simulation trace and its newline-delimited JSON export.
//!
//! File layout: one header line
//! `{"format":"vhtmon-trace","version":1,"config":{...}}` followed by one
//! record per line, e.g.
//! `{"t":3,"node":"10.0.0.4","event":"sent","type":"query","bytes":211,"packet":"{...}"}`.
//! `t` is milliseconds since the start of the run.

use std::io::{self, BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::config::ScenarioConfig;
use crate::protocol::{AutomatonState, ErrorCode};
use crate::wire::{Address, PacketType};

pub const TRACE_FORMAT: &str = "vhtmon-trace";
pub const TRACE_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum RecordKind {
    MonitoringStarted,
    Sent {
        #[serde(rename = "type")]
        packet_type: PacketType,
        bytes: usize,
        /// Canonical JSON encoding of the packet.
        packet: String,
    },
    Delivered {
        from: Address,
        #[serde(rename = "type")]
        packet_type: PacketType,
    },
    Dropped {
        from: Address,
        #[serde(rename = "type")]
        packet_type: PacketType,
    },
    StateChange {
        from: AutomatonState,
        to: AutomatonState,
    },
    Verdict {
        outcome: f64,
        observations: u64,
    },
    Error {
        code: ErrorCode,
    },
    NodeDown,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub t: u64,
    pub node: Address,
    #[serde(flatten)]
    pub kind: RecordKind,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SimTrace {
    pub records: Vec<TraceRecord>,
}

impl SimTrace {
    pub fn push(&mut self, t: u64, node: Address, kind: RecordKind) {
        debug_assert!(self.records.last().is_none_or(|r| r.t <= t));
        self.records.push(TraceRecord { t, node, kind });
    }

    pub fn iter(&self) -> impl Iterator<Item = &TraceRecord> {
        self.records.iter()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

#[derive(Serialize, Deserialize)]
struct TraceHeader {
    format: String,
    version: u32,
    config: ScenarioConfig,
}

#[derive(Debug, Error)]
pub enum TraceReadError {
    #[error("i/o error reading trace: {0}")]
    Io(#[from] io::Error),
    #[error("trace line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("trace is empty")]
    Empty,
    #[error("unsupported trace format {format:?} version {version}")]
    Unsupported { format: String, version: u32 },
}

pub fn write_ndjson<W: Write>(
    trace: &SimTrace,
    config: &ScenarioConfig,
    mut out: W,
) -> io::Result<()> {
    let header = TraceHeader {
        format: TRACE_FORMAT.into(),
        version: TRACE_VERSION,
        config: config.clone(),
    };
    serde_json::to_writer(&mut out, &header)?;
    out.write_all(b"\n")?;
    for r in &trace.records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    out.flush()
}

pub fn to_ndjson(trace: &SimTrace, config: &ScenarioConfig) -> Vec<u8> {
    let mut buf = Vec::new();
    write_ndjson(trace, config, &mut buf).expect("writing to a Vec cannot fail");
    buf
}

pub fn read_ndjson<R: BufRead>(input: R) -> Result<(ScenarioConfig, SimTrace), TraceReadError> {
    let mut lines = input.lines().enumerate();
    let (_, first) = lines.next().ok_or(TraceReadError::Empty)?;
    let header: TraceHeader = serde_json::from_str(&first?)
        .map_err(|e| TraceReadError::Parse { line: 1, message: e.to_string() })?;
    if header.format != TRACE_FORMAT || header.version != TRACE_VERSION {
        return Err(TraceReadError::Unsupported { format: header.format, version: header.version });
    }
    let mut trace = SimTrace::default();
    for (i, line) in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: TraceRecord = serde_json::from_str(&line)
            .map_err(|e| TraceReadError::Parse { line: i + 1, message: e.to_string() })?;
        trace.records.push(rec);
    }
    Ok((header.config, trace))
}
