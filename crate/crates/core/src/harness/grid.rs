use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::config::{NoiseKind, RunConfig};
use super::floats;
use super::run::{run_reps, Problem, RunTrace, StopReason};
use crate::analysis::SampleStats;
use crate::error::Result;
use crate::solvers::Method;

/// One cell of the results table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridRow {
    pub noise: NoiseKind,
    pub dataset: String,
    pub method: Method,
    #[serde(with = "floats::option")]
    pub noise_level: Option<f64>,
    pub reps: usize,
    pub diverged_reps: usize,
    /// Final error of repetition 0.
    #[serde(with = "floats")]
    pub single_run: f64,
    /// Mean final error over the repetitions; `inf` if any diverged.
    #[serde(with = "floats")]
    pub mc_mean: f64,
    #[serde(with = "floats")]
    pub mc_std: f64,
    /// Iterations of repetition 0.
    pub iterations: usize,
    pub error: Option<String>,
}

impl GridRow {
    fn failed(cfg: &RunConfig, msg: String) -> Self {
        Self {
            noise: cfg.noise,
            dataset: cfg.dataset.clone(),
            method: cfg.method,
            noise_level: None,
            reps: 0,
            diverged_reps: 0,
            single_run: f64::NAN,
            mc_mean: f64::NAN,
            mc_std: f64::NAN,
            iterations: 0,
            error: Some(msg),
        }
    }

    fn from_traces(cfg: &RunConfig, label: &str, traces: &[RunTrace]) -> Self {
        let finals: Vec<f64> = traces.iter().map(|t| t.summary.final_error).collect();
        let diverged_reps = traces.iter().filter(|t| t.summary.stop == StopReason::Diverged).count();
        let (mc_mean, mc_std) = if finals.iter().any(|v| !v.is_finite()) {
            (f64::INFINITY, f64::INFINITY)
        } else {
            match SampleStats::from_samples(&finals) {
                Ok(s) => (s.mean, s.std),
                Err(_) => (f64::NAN, f64::NAN),
            }
        };
        let first = &traces[0].summary;
        Self {
            noise: cfg.noise,
            dataset: label.to_string(),
            method: cfg.method,
            noise_level: first.noise_level,
            reps: traces.len(),
            diverged_reps,
            single_run: first.final_error,
            mc_mean,
            mc_std,
            iterations: first.iterations,
            error: None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GridTable {
    pub rows: Vec<GridRow>,
}

impl GridTable {
    pub fn get(&self, noise: NoiseKind, dataset: &str, method: Method) -> Option<&GridRow> {
        self.rows
            .iter()
            .find(|r| r.noise == noise && r.dataset == dataset && r.method == method)
    }
}

/// Runs every configuration and tabulates final errors. A configuration that
/// fails contributes a row carrying the error message.
pub fn run_grid(configs: &[RunConfig]) -> GridTable {
    run_grid_with(configs, |_, _| Ok(()))
}

/// As [`run_grid`], handing every finished trace to `sink` (for example to
/// write it to disk) before it is dropped. A sink error is recorded on the row.
pub fn run_grid_with<F>(configs: &[RunConfig], mut sink: F) -> GridTable
where
    F: FnMut(&RunConfig, &RunTrace) -> Result<()>,
{
    let mut problems: HashMap<(String, Option<PathBuf>), Arc<Problem>> = HashMap::new();
    let mut rows = Vec::with_capacity(configs.len());
    for cfg in configs {
        if let Err(e) = cfg.validate() {
            rows.push(GridRow::failed(cfg, e.to_string()));
            continue;
        }
        let key = (cfg.dataset.clone(), cfg.data_dir.clone());
        let problem = match problems.get(&key) {
            Some(p) => Arc::clone(p),
            None => match Problem::for_config(cfg) {
                Ok(p) => {
                    let p = Arc::new(p);
                    problems.insert(key, Arc::clone(&p));
                    p
                }
                Err(e) => {
                    rows.push(GridRow::failed(cfg, e.to_string()));
                    continue;
                }
            },
        };
        let mut traces = Vec::new();
        let mut failure = None;
        for result in run_reps(&problem, cfg) {
            match result.and_then(|tr| sink(cfg, &tr).map(|()| tr)) {
                Ok(tr) => traces.push(tr),
                Err(e) => {
                    failure.get_or_insert(e.to_string());
                }
            }
        }
        let row = if traces.is_empty() {
            GridRow::failed(cfg, failure.unwrap_or_else(|| "no repetitions ran".into()))
        } else {
            let mut row = GridRow::from_traces(cfg, &problem.label, &traces);
            row.error = failure;
            row
        };
        rows.push(row);
    }
    GridTable { rows }
}
