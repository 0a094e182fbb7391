//! Experiment harness: configuration, runs to the stopping rule, Monte Carlo
//! grids, reports and CSV/JSON output.

mod config;
mod emit;
pub mod floats;
mod grid;
mod report;
mod run;

pub use config::{
    GridConfig, NoiseKind, ObservationSettings, ParamOverrides, ProcessSettings, RunConfig, Sweep, Tuning,
};
pub use emit::{
    emit, grid_csv_string, parse_grid_csv, parse_trace_csv, parse_trace_json, rows_csv_string, trace_csv_string,
    trace_json_string, trace_stem, write_rows_csv, write_trace_csv, write_trace_files, Format,
};
pub use grid::{run_grid, run_grid_with, GridRow, GridTable};
pub use report::{asymptotic_rate, bounds_report, spectrum_report, BoundsReport, ParamCheck, SpectrumReport};
pub use run::{
    is_random, run, run_rep, run_reps, version, Problem, RunSummary, RunTrace, StopReason, StopRule, TraceRow,
};
