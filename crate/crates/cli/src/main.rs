//! `vhtmon`: run, validate and replay monitoring scenarios.
//!
//! Exit codes: 0 success, 1 bad input (manifest or trace), 2 runtime
//! failure such as an unwritable output directory.

mod manifest;

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use serde::Serialize;
use vhtmon::metrics::SummaryWriter;
use vhtmon::runner::{run_parallel, run_sequential, Replication};
use vhtmon::sim::{read_ndjson, write_ndjson};
use vhtmon::{reduce, summarize, MetricsReport, ScenarioConfig};

use manifest::Manifest;

#[derive(Parser)]
#[command(name = "vhtmon", version, about = "Simulate decentralized MANET monitoring scenarios")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every cell of a manifest and write summary.csv and runs.jsonl.
    Run {
        config: PathBuf,
        /// Output directory; defaults to `results/<manifest name>`.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Base seed for every cell, overriding the manifest.
        #[arg(long)]
        seed: Option<u64>,
        /// Worker threads; 0 uses every core, 1 runs on the main thread.
        #[arg(long, default_value_t = 0)]
        parallel: usize,
        /// Also write one ndjson trace per replication under traces/.
        #[arg(long)]
        traces: bool,
    },
    /// Parse and validate a manifest without running it.
    Validate { config: PathBuf },
    /// Recompute the metrics of a stored trace and print them as JSON.
    Replay { trace: PathBuf },
}

enum Failure {
    Input(anyhow::Error),
    Runtime(anyhow::Error),
}

impl Failure {
    fn exit(self) -> ExitCode {
        let (code, err) = match self {
            Failure::Input(e) => (1, e),
            Failure::Runtime(e) => (2, e),
        };
        eprintln!("error: {err:#}");
        ExitCode::from(code)
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run { config, out, seed, parallel, traces } => {
            run(&config, out, seed, parallel, traces)
        }
        Command::Validate { config } => validate(&config),
        Command::Replay { trace } => replay(&trace),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => f.exit(),
    }
}

fn validate(path: &Path) -> Result<(), Failure> {
    let m = Manifest::load(path).map_err(Failure::Input)?;
    println!("ok: {} cells, {} runs", m.cells.len(), m.total_runs());
    Ok(())
}

fn replay(path: &Path) -> Result<(), Failure> {
    let file = File::open(path)
        .with_context(|| format!("cannot open {}", path.display()))
        .map_err(Failure::Input)?;
    let (config, trace) = read_ndjson(BufReader::new(file))
        .with_context(|| format!("in {}", path.display()))
        .map_err(Failure::Input)?;
    let report = reduce(&trace, config.node_count);
    let json = serde_json::to_string_pretty(&report).expect("reports serialize");
    println!("{json}");
    Ok(())
}

#[derive(Serialize)]
struct RunLine<'a> {
    cell: usize,
    scenario: &'a str,
    replication: u32,
    seed: u64,
    report: &'a MetricsReport,
}

fn run(
    path: &Path,
    out: Option<PathBuf>,
    seed: Option<u64>,
    parallel: usize,
    traces: bool,
) -> Result<(), Failure> {
    let mut m = Manifest::load(path).map_err(Failure::Input)?;
    if let Some(s) = seed {
        m = m.with_seed(s);
    }
    let out = out.unwrap_or_else(|| {
        let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned());
        Path::new("results").join(stem.unwrap_or_else(|| "run".into()))
    });
    execute(&m, &out, parallel, traces).map_err(Failure::Runtime)
}

fn execute(m: &Manifest, out: &Path, parallel: usize, traces: bool) -> Result<()> {
    fs::create_dir_all(out).with_context(|| format!("cannot create {}", out.display()))?;
    let trace_dir = out.join("traces");
    if traces {
        fs::create_dir_all(&trace_dir)
            .with_context(|| format!("cannot create {}", trace_dir.display()))?;
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(parallel)
        .build()
        .context("cannot start worker pool")?;

    let csv_path = out.join("summary.csv");
    let csv = File::create(&csv_path)
        .with_context(|| format!("cannot create {}", csv_path.display()))?;
    let mut summary = SummaryWriter::new(BufWriter::new(csv))?;
    let runs_path = out.join("runs.jsonl");
    let mut runs = BufWriter::new(
        File::create(&runs_path)
            .with_context(|| format!("cannot create {}", runs_path.display()))?,
    );

    for (index, cell) in m.cells.iter().enumerate() {
        let reps = if parallel == 1 {
            run_sequential(cell, traces)
        } else {
            pool.install(|| run_parallel(cell, traces))
        }
        .with_context(|| format!("cell {index}"))?;

        for r in &reps {
            let line = RunLine {
                cell: index,
                scenario: &cell.name,
                replication: r.index,
                seed: r.seed,
                report: &r.report,
            };
            serde_json::to_writer(&mut runs, &line)?;
            runs.write_all(b"\n")?;
        }
        runs.flush()?;
        if traces {
            write_traces(&trace_dir, index, cell, &reps)?;
        }
        let reports: Vec<MetricsReport> = reps.into_iter().map(|r| r.report).collect();
        let row = summarize(cell, &reports);
        summary.write_row(&row)?;
        eprintln!(
            "cell {index} {}: nodes {} speed {} {} {}: accuracy {:.3}, convergence {}",
            cell.name,
            cell.node_count,
            cell.speed,
            cell.mobility,
            cell.routing,
            row.mean_accuracy,
            row.mean_convergence_ms.map_or("n/a".into(), |t| format!("{t:.1} ms")),
        );
    }
    summary.into_inner()?.flush()?;
    Ok(())
}

fn write_traces(dir: &Path, cell_index: usize, cell: &ScenarioConfig, reps: &[Replication]) -> Result<()> {
    for r in reps {
        let Some(trace) = &r.trace else { continue };
        let path = dir.join(format!("cell{cell_index:03}_rep{:04}.ndjson", r.index));
        let file =
            File::create(&path).with_context(|| format!("cannot create {}", path.display()))?;
        write_ndjson(trace, &cell.with_seed(r.seed), BufWriter::new(file))
            .with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(())
}
