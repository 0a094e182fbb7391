use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::de::DeserializeOwned;
use serde::Serialize;

use super::grid::{GridRow, GridTable};
use super::run::{RunTrace, TraceRow};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Csv,
    Json,
}

impl Format {
    pub fn extension(self) -> &'static str {
        match self {
            Format::Csv => "csv",
            Format::Json => "json",
        }
    }
}

impl fmt::Display for Format {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.extension())
    }
}

impl FromStr for Format {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(Format::Csv),
            "json" => Ok(Format::Json),
            _ => Err(Error::Config(format!("unknown format `{s}` (expected csv or json)"))),
        }
    }
}

fn write_csv_rows<W: Write, T: Serialize>(w: W, rows: &[T]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for r in rows {
        out.serialize(r)?;
    }
    out.flush()?;
    Ok(())
}

fn read_csv_rows<T: DeserializeOwned>(text: &str) -> Result<Vec<T>> {
    let mut rd = csv::Reader::from_reader(text.as_bytes());
    let mut rows = Vec::new();
    for r in rd.deserialize() {
        rows.push(r?);
    }
    Ok(rows)
}

fn to_utf8(bytes: Vec<u8>) -> String {
    String::from_utf8(bytes).expect("csv output is built from UTF-8 fields")
}

/// Columns `t, err, step_delta, bound_t1, u_t, bound_t2, diverged`. Missing
/// values are empty fields and infinities are written as `inf`.
pub fn write_trace_csv<W: Write>(trace: &RunTrace, w: W) -> Result<()> {
    write_rows_csv(&trace.rows, w)
}

/// The trace CSV for bare rows, as produced for bound-only traces.
pub fn write_rows_csv<W: Write>(rows: &[TraceRow], mut w: W) -> Result<()> {
    if rows.is_empty() {
        writeln!(w, "t,err,step_delta,bound_t1,u_t,bound_t2,diverged")?;
        return Ok(());
    }
    write_csv_rows(w, rows)
}

pub fn trace_csv_string(trace: &RunTrace) -> Result<String> {
    rows_csv_string(&trace.rows)
}

pub fn rows_csv_string(rows: &[TraceRow]) -> Result<String> {
    let mut buf = Vec::new();
    write_rows_csv(rows, &mut buf)?;
    Ok(to_utf8(buf))
}

pub fn parse_trace_csv(text: &str) -> Result<Vec<TraceRow>> {
    read_csv_rows(text)
}

/// Pretty-printed JSON holding the configuration, solver parameters, bound
/// inputs, version string, rows and summary.
pub fn trace_json_string(trace: &RunTrace) -> Result<String> {
    let mut s = serde_json::to_string_pretty(trace)?;
    s.push('\n');
    Ok(s)
}

pub fn parse_trace_json(text: &str) -> Result<RunTrace> {
    Ok(serde_json::from_str(text)?)
}

pub fn grid_csv_string(table: &GridTable) -> Result<String> {
    let mut buf = Vec::new();
    if table.rows.is_empty() {
        buf.extend_from_slice(
            b"noise,dataset,method,noise_level,reps,diverged_reps,single_run,mc_mean,mc_std,iterations,error\n",
        );
    } else {
        write_csv_rows(&mut buf, &table.rows)?;
    }
    Ok(to_utf8(buf))
}

pub fn parse_grid_csv(text: &str) -> Result<GridTable> {
    Ok(GridTable {
        rows: read_csv_rows::<GridRow>(text)?,
    })
}

/// Writes `trace` to `path` in the given format.
pub fn emit(trace: &RunTrace, format: Format, path: &Path) -> Result<()> {
    let text = match format {
        Format::Csv => trace_csv_string(trace)?,
        Format::Json => trace_json_string(trace)?,
    };
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, text)?;
    Ok(())
}

/// `<dataset>_<method>_<noise>_seed<seed>`, with anything outside
/// `[A-Za-z0-9._-]` replaced by `-`.
pub fn trace_stem(trace: &RunTrace) -> String {
    let s = &trace.summary;
    let raw = format!("{}_{}_{}_seed{}", s.dataset, s.method, s.noise, s.seed);
    raw.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || "._-".contains(c) {
                c
            } else {
                '-'
            }
        })
        .collect()
}

/// Writes `<stem>.csv` and `<stem>.json` into `dir` and returns both paths.
pub fn write_trace_files(trace: &RunTrace, dir: &Path) -> Result<(PathBuf, PathBuf)> {
    let stem = trace_stem(trace);
    let csv_path = dir.join(format!("{stem}.csv"));
    let json_path = dir.join(format!("{stem}.json"));
    emit(trace, Format::Csv, &csv_path)?;
    emit(trace, Format::Json, &json_path)?;
    Ok((csv_path, json_path))
}
