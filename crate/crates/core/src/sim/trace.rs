//! Per-step trace records and their CSV / JSON-lines persistence.
//!
//! CSV cells hold floats in scientific notation with 17 significant digits so
//! a write/read cycle reproduces every value bit for bit. Vector fields are
//! spread over one column per coordinate (`x_0`, `x_1`, ...). Optional fields
//! are empty cells in CSV and `null` in JSON.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::controller::Feasibility;
use crate::error::{Error, Result};
use crate::geom::Point;

/// Column layout of the CSV trace; `{i}` expands to one column per coordinate.
pub const SCHEMA: &str = include_str!("../../schema/trace_columns.txt");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub k: usize,
    pub t: f64,
    pub x: Point,
    pub y: Point,
    pub u: Point,
    pub mu: f64,
    pub mu_max: f64,
    /// Whether the update producing this state resampled.
    pub resampled: bool,
    pub ess: usize,
    pub barrier: f64,
    pub h_lower: f64,
    pub h_upper: f64,
    pub kl: Option<f64>,
    pub psi: f64,
    pub lipschitz: f64,
    pub diameter: f64,
    pub a1: f64,
    pub b1: f64,
    pub delta_b: f64,
    pub delta_r: f64,
    pub delta_r_raw: f64,
    pub delta_total: f64,
    pub alpha: Option<f64>,
    pub feasibility: Feasibility,
    /// Composite certificate holds at this step (budget below beta and `b >= beta`).
    pub certified: bool,
    pub envelope_infeasible: bool,
    pub tracking_error: f64,
    pub rho: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TraceFormat {
    Csv,
    JsonLines,
}

impl TraceFormat {
    /// `.jsonl` / `.json` select JSON lines, anything else CSV.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("jsonl") | Some("json") => TraceFormat::JsonLines,
            _ => TraceFormat::Csv,
        }
    }
}

/// Expanded CSV header for dimension `dim`.
pub fn header(dim: usize) -> Vec<String> {
    let mut out = Vec::new();
    for line in SCHEMA.lines() {
        let name = line.split('#').next().unwrap().trim();
        if name.is_empty() {
            continue;
        }
        match name.strip_suffix("_{i}") {
            Some(base) => out.extend((0..dim).map(|i| format!("{base}_{i}"))),
            None => out.push(name.to_string()),
        }
    }
    out
}

fn fmt(v: f64) -> String {
    format!("{v:.16e}")
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt).unwrap_or_default()
}

fn row(r: &TraceRecord) -> Vec<String> {
    let mut out = vec![r.k.to_string(), fmt(r.t)];
    for v in [&r.x, &r.y, &r.u] {
        out.extend(v.iter().map(|&c| fmt(c)));
    }
    out.extend([
        fmt(r.mu),
        fmt(r.mu_max),
        r.resampled.to_string(),
        r.ess.to_string(),
    ]);
    out.extend([r.barrier, r.h_lower, r.h_upper].map(fmt));
    out.push(fmt_opt(r.kl));
    out.extend(
        [
            r.psi,
            r.lipschitz,
            r.diameter,
            r.a1,
            r.b1,
            r.delta_b,
            r.delta_r,
            r.delta_r_raw,
            r.delta_total,
        ]
        .map(fmt),
    );
    out.push(fmt_opt(r.alpha));
    out.extend([
        r.feasibility.as_str().to_string(),
        r.certified.to_string(),
        r.envelope_infeasible.to_string(),
        fmt(r.tracking_error),
        fmt(r.rho),
    ]);
    out
}

pub fn write_trace(
    trace: &[TraceRecord],
    dim: usize,
    path: &Path,
    format: TraceFormat,
) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    match format {
        TraceFormat::Csv => {
            let mut w = csv::Writer::from_writer(BufWriter::new(file));
            w.write_record(header(dim))?;
            for r in trace {
                w.write_record(row(r))?;
            }
            w.flush().map_err(|e| Error::io(path, e))?;
        }
        TraceFormat::JsonLines => {
            let mut w = BufWriter::new(file);
            for r in trace {
                serde_json::to_writer(&mut w, r)?;
                w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
            }
            w.flush().map_err(|e| Error::io(path, e))?;
        }
    }
    Ok(())
}

fn parse_err(path: &Path, line: usize, what: impl std::fmt::Display) -> Error {
    Error::Parse {
        path: path.into(),
        message: format!("record {line}: {what}"),
    }
}

pub fn read_trace(path: &Path) -> Result<Vec<TraceRecord>> {
    match TraceFormat::from_path(path) {
        TraceFormat::JsonLines => {
            let file = File::open(path).map_err(|e| Error::io(path, e))?;
            let mut out = Vec::new();
            for (i, line) in BufReader::new(file).lines().enumerate() {
                let line = line.map_err(|e| Error::io(path, e))?;
                if line.trim().is_empty() {
                    continue;
                }
                out.push(serde_json::from_str(&line).map_err(|e| parse_err(path, i + 1, e))?);
            }
            Ok(out)
        }
        TraceFormat::Csv => read_csv(path),
    }
}

fn read_csv(path: &Path) -> Result<Vec<TraceRecord>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rdr = csv::Reader::from_reader(file);
    let head: Vec<String> = rdr.headers()?.iter().map(String::from).collect();
    let dim = head.iter().filter(|h| h.starts_with("x_")).count();
    if head != header(dim) {
        return Err(parse_err(path, 0, "header does not match the trace schema"));
    }
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let mut cells = rec.iter();
        let mut next = || {
            cells
                .next()
                .ok_or_else(|| parse_err(path, i + 1, "short row"))
        };
        let num = |s: &str| s.parse::<f64>().map_err(|e| parse_err(path, i + 1, e));
        let int = |s: &str| s.parse::<usize>().map_err(|e| parse_err(path, i + 1, e));
        let flag = |s: &str| s.parse::<bool>().map_err(|e| parse_err(path, i + 1, e));
        let opt = |s: &str| {
            if s.is_empty() {
                Ok(None)
            } else {
                num(s).map(Some)
            }
        };

        let k = int(next()?)?;
        let t = num(next()?)?;
        let mut vecs = [Vec::new(), Vec::new(), Vec::new()];
        for v in &mut vecs {
            for _ in 0..dim {
                v.push(num(next()?)?);
            }
        }
        let [x, y, u] = vecs;
        let mu = num(next()?)?;
        let mu_max = num(next()?)?;
        let resampled = flag(next()?)?;
        let ess = int(next()?)?;
        let barrier = num(next()?)?;
        let h_lower = num(next()?)?;
        let h_upper = num(next()?)?;
        let kl = opt(next()?)?;
        let mut f = [0.0; 9];
        for v in &mut f {
            *v = num(next()?)?;
        }
        let alpha = opt(next()?)?;
        let feasibility = match next()? {
            "feasible" => Feasibility::Feasible,
            "envelope_bound" => Feasibility::EnvelopeBound,
            "pcbf_bound" => Feasibility::PcbfBound,
            "infeasible" => Feasibility::Infeasible,
            other => {
                return Err(parse_err(
                    path,
                    i + 1,
                    format!("unknown feasibility `{other}`"),
                ))
            }
        };
        let certified = flag(next()?)?;
        let envelope_infeasible = flag(next()?)?;
        let tracking_error = num(next()?)?;
        let rho = num(next()?)?;
        let [psi, lipschitz, diameter, a1, b1, delta_b, delta_r, delta_r_raw, delta_total] = f;
        out.push(TraceRecord {
            k,
            t,
            x,
            y,
            u,
            mu,
            mu_max,
            resampled,
            ess,
            barrier,
            h_lower,
            h_upper,
            kl,
            psi,
            lipschitz,
            diameter,
            a1,
            b1,
            delta_b,
            delta_r,
            delta_r_raw,
            delta_total,
            alpha,
            feasibility,
            certified,
            envelope_infeasible,
            tracking_error,
            rho,
        });
    }
    Ok(out)
}
