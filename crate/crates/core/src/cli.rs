//! Command-line front end.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use rayon::prelude::*;
use serde_json::Value;

use crate::error::{Error, Result};
use crate::sim::{self, SimConfig, TraceFormat, TraceRecord, ENVELOPE_TOL};
use crate::verify::{self, ClaimId, ClaimSpec};

#[derive(Debug, Parser)]
#[command(
    name = "veil",
    version,
    about = "Intent-privacy control against a particle-filter observer"
)]
#[command(arg_required_else_help = true)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run one closed-loop simulation.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Directory for the trace, report and snapshots.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Trace format: csv or jsonl.
        #[arg(long, default_value = "csv")]
        format: String,
    },
    /// Check one probabilistic claim by Monte Carlo.
    Verify {
        #[arg(long)]
        claim: String,
        #[arg(long)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 0.95)]
        confidence: f64,
        /// Independent scenario states for frequency claims.
        #[arg(long, default_value_t = 1)]
        states: usize,
        /// Append the JSON report to this file.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the configuration once per value of one parameter.
    Sweep {
        /// Dotted path into the configuration, e.g. `barrier.beta`.
        #[arg(long)]
        param: String,
        /// Comma-separated values.
        #[arg(long, value_delimiter = ',', num_args = 1..)]
        values: Vec<String>,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Summarize a trace file.
    Report {
        #[arg(long)]
        trace: PathBuf,
    },
}

/// Runs the CLI and returns the process exit code: 0 on success, 1 when a
/// verification fails, 2 on usage or input errors.
pub fn cli_main<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            2
        }
    }
}

fn run(cmd: Command) -> Result<i32> {
    match cmd {
        Command::Simulate {
            config,
            seed,
            out,
            format,
        } => simulate(&config, seed, out.as_deref(), &format),
        Command::Verify {
            claim,
            trials,
            seed,
            confidence,
            states,
            out,
        } => {
            let mut spec = ClaimSpec::new(claim.parse::<ClaimId>()?, trials, seed);
            spec.confidence = confidence;
            spec.states = states;
            let report = verify::monte_carlo_verify(&spec)?;
            let line = serde_json::to_string(&report)?;
            println!("{line}");
            println!("{}", report.summary());
            eprintln!("runtime {:.2}s", report.runtime_secs);
            if let Some(path) = out {
                let mut f = std::fs::OpenOptions::new()
                    .create(true)
                    .append(true)
                    .open(&path)
                    .map_err(|e| Error::io(&path, e))?;
                writeln!(f, "{line}").map_err(|e| Error::io(&path, e))?;
            }
            Ok(if report.pass { 0 } else { 1 })
        }
        Command::Sweep {
            param,
            values,
            config,
            out,
        } => sweep(&param, &values, &config, out.as_deref()),
        Command::Report { trace } => {
            let records = sim::read_trace(&trace)?;
            print!("{}", summarize(&records));
            Ok(0)
        }
    }
}

fn simulate(config: &Path, seed: Option<u64>, out: Option<&Path>, format: &str) -> Result<i32> {
    let mut cfg = SimConfig::load(config)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let fmt = match format {
        "csv" => TraceFormat::Csv,
        "jsonl" => TraceFormat::JsonLines,
        other => return Err(Error::Config(format!("unknown trace format `{other}`"))),
    };
    let output = sim::run_simulation(&cfg)?;
    let report = serde_json::to_string_pretty(&output.report)?;
    if let Some(dir) = out {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let name = if fmt == TraceFormat::Csv {
            "trace.csv"
        } else {
            "trace.jsonl"
        };
        sim::write_trace(&output.trace, cfg.dim(), &dir.join(name), fmt)?;
        let path = dir.join("report.json");
        std::fs::write(&path, format!("{report}\n")).map_err(|e| Error::io(&path, e))?;
        if !output.snapshots.is_empty() {
            let snaps = dir.join("snapshots");
            std::fs::create_dir_all(&snaps).map_err(|e| Error::io(&snaps, e))?;
            for (k, z) in &output.snapshots {
                let path = snaps.join(format!("state_{k:06}.json"));
                std::fs::write(&path, z.to_json()?).map_err(|e| Error::io(&path, e))?;
            }
        }
    }
    println!("{report}");
    Ok(0)
}

/// Parses a sweep value as JSON when possible (numbers, booleans), otherwise as a string.
fn parse_value(raw: &str) -> Value {
    serde_json::from_str(raw.trim()).unwrap_or_else(|_| Value::String(raw.trim().to_string()))
}

/// Returns a copy of `cfg` with the dotted `param` replaced by `value`.
pub fn with_param(cfg: &SimConfig, param: &str, value: &str) -> Result<SimConfig> {
    let mut root = serde_json::to_value(cfg)?;
    let mut slot = &mut root;
    for key in param.split('.') {
        slot = slot
            .as_object_mut()
            .and_then(|m| m.get_mut(key))
            .ok_or_else(|| Error::Config(format!("unknown parameter `{param}`")))?;
    }
    *slot = parse_value(value);
    let out: SimConfig = serde_json::from_value(root)
        .map_err(|e| Error::Config(format!("{param} = {value}: {e}")))?;
    out.validate()?;
    Ok(out)
}

fn sweep(param: &str, values: &[String], config: &Path, out: Option<&Path>) -> Result<i32> {
    let base = SimConfig::load(config)?;
    let cfgs = values
        .iter()
        .map(|v| with_param(&base, param, v))
        .collect::<Result<Vec<_>>>()?;
    let runs = cfgs
        .par_iter()
        .map(sim::run_simulation)
        .collect::<Result<Vec<_>>>()?;

    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "param",
        "value",
        "steps",
        "mean_mu",
        "min_barrier",
        "final_barrier",
        "certified_steps",
        "infeasible_steps",
        "envelope_violations",
        "resampling_count",
        "first_negative",
    ])?;
    for (v, run) in values.iter().zip(&runs) {
        let r = &run.report;
        let min_b = run
            .trace
            .iter()
            .map(|t| t.barrier)
            .fold(r.final_barrier, f64::min);
        w.write_record([
            param.to_string(),
            v.trim().to_string(),
            r.steps.to_string(),
            format!("{:.16e}", r.mean_mu),
            format!("{min_b:.16e}"),
            format!("{:.16e}", r.final_barrier),
            r.certified_steps.to_string(),
            r.infeasible_steps.to_string(),
            r.envelope_violations.to_string(),
            r.resampling_count.to_string(),
            r.first_negative.map(|k| k.to_string()).unwrap_or_default(),
        ])?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Config(e.to_string()))?;
    match out {
        Some(path) => std::fs::write(path, &bytes).map_err(|e| Error::io(path, e))?,
        None => std::io::stdout()
            .write_all(&bytes)
            .map_err(|e| Error::io("<stdout>", e))?,
    }
    Ok(0)
}

/// Plain-text summary of a trace.
pub fn summarize(records: &[TraceRecord]) -> String {
    let n = records.len();
    let mut s = format!("records: {n}\n");
    if n == 0 {
        return s;
    }
    let first = &records[0];
    let last = &records[n - 1];
    let mean = |f: fn(&TraceRecord) -> f64| records.iter().map(f).sum::<f64>() / n as f64;
    let min_b = records
        .iter()
        .map(|r| r.barrier)
        .fold(f64::INFINITY, f64::min);
    let first_neg = records.iter().find(|r| r.barrier < 0.0).map(|r| r.t);
    let over = records
        .iter()
        .filter(|r| r.tracking_error > r.rho + ENVELOPE_TOL)
        .count();
    let feasible = records
        .iter()
        .filter(|r| r.feasibility.is_feasible())
        .count();
    s += &format!("time: {} .. {}\n", first.t, last.t);
    s += &format!("mean mu: {:.6}\n", mean(|r| r.mu));
    s += &format!("mean mu_max: {:.6}\n", mean(|r| r.mu_max));
    s += &format!(
        "barrier: first {:.6}, last {:.6}, min {:.6}\n",
        first.barrier, last.barrier, min_b
    );
    s += &format!(
        "first negative barrier at t = {}\n",
        first_neg
            .map(|t| t.to_string())
            .unwrap_or_else(|| "never".into())
    );
    s += &format!("budget-feasible steps: {feasible}\n");
    s += &format!(
        "certified steps: {}\n",
        records.iter().filter(|r| r.certified).count()
    );
    s += &format!(
        "resampling steps: {}\n",
        records.iter().filter(|r| r.resampled).count()
    );
    s += &format!("envelope exceedances: {over}\n");
    s += &format!(
        "max tracking error: {:.6}\n",
        records.iter().map(|r| r.tracking_error).fold(0.0, f64::max)
    );
    s
}
