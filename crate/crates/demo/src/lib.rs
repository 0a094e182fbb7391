//! WebAssembly front end for the simulator.
//!
//! Every entry point takes a JSON request and returns a JSON response, so the
//! page exchanges nothing but strings with the module. The `*_json` functions
//! hold the logic and run natively in tests; the exported wrappers only turn
//! errors into JavaScript exceptions.

use std::cell::RefCell;
use std::rc::Rc;

use serde::{Deserialize, Serialize};
use wasm_bindgen::prelude::*;

use ipg_core::harness::{
    bounds_report, run_rep, spectrum_report, NoiseKind, ParamOverrides, Problem, RunConfig, RunSummary, TraceRow,
    Tuning,
};
use ipg_core::solvers::{Method, SolverConfig};

/// Most points sent back per curve; longer runs are thinned evenly.
pub const MAX_POINTS: usize = 1500;

fn default_agents() -> usize {
    10
}

fn default_max_iterations() -> usize {
    3000
}

fn default_horizon() -> usize {
    500
}

#[derive(Debug, Clone, Deserialize)]
pub struct SimulateRequest {
    pub dataset: String,
    pub methods: Vec<Method>,
    #[serde(default)]
    pub noise: NoiseKind,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_max_iterations")]
    pub max_iterations: usize,
    #[serde(default = "default_agents")]
    pub agents: usize,
    #[serde(default)]
    pub tuning: Tuning,
    #[serde(default)]
    pub params: ParamOverrides,
}

#[derive(Debug, Clone, Serialize)]
pub struct Curve {
    pub method: Method,
    pub solver: SolverConfig,
    pub rows: Vec<TraceRow>,
    pub summary: RunSummary,
}

#[derive(Debug, Clone, Serialize)]
pub struct SimulateResponse {
    pub dataset: String,
    pub lambda_1: f64,
    pub lambda_d: f64,
    pub curves: Vec<Curve>,
}

#[derive(Debug, Clone, Deserialize)]
pub struct BoundsRequest {
    pub dataset: String,
    #[serde(default)]
    pub noise: NoiseKind,
    #[serde(default = "default_horizon")]
    pub horizon: usize,
    #[serde(default = "default_agents")]
    pub agents: usize,
    #[serde(default)]
    pub tuning: Tuning,
}

#[derive(Debug, Clone, Deserialize)]
pub struct SpectrumRequest {
    pub dataset: String,
    #[serde(default = "default_agents")]
    pub agents: usize,
    #[serde(default)]
    pub tuning: Tuning,
}

thread_local! {
    static PROBLEMS: RefCell<Vec<(String, Rc<Problem>)>> = const { RefCell::new(Vec::new()) };
}

fn problem_for(cfg: &RunConfig) -> Result<Rc<Problem>, String> {
    if let Some(p) = PROBLEMS.with(|c| {
        c.borrow()
            .iter()
            .find(|(k, _)| *k == cfg.dataset)
            .map(|(_, p)| Rc::clone(p))
    }) {
        return Ok(p);
    }
    let p = Rc::new(Problem::for_config(cfg).map_err(|e| e.to_string())?);
    PROBLEMS.with(|c| c.borrow_mut().push((cfg.dataset.clone(), Rc::clone(&p))));
    Ok(p)
}

/// Keeps every `k`-th row so at most `max` remain, always including the last.
pub fn thin(rows: Vec<TraceRow>, max: usize) -> Vec<TraceRow> {
    if rows.len() <= max || max < 2 {
        return rows;
    }
    let k = rows.len().div_ceil(max - 1);
    let last = rows.len() - 1;
    rows.into_iter()
        .enumerate()
        .filter(|(i, _)| i % k == 0 || *i == last)
        .map(|(_, r)| r)
        .collect()
}

fn to_json<T: Serialize>(v: &T) -> Result<String, String> {
    serde_json::to_string(v).map_err(|e| e.to_string())
}

fn parse<'a, T: Deserialize<'a>>(request: &'a str) -> Result<T, String> {
    serde_json::from_str(request).map_err(|e| format!("bad request: {e}"))
}

/// Runs each requested method once and returns its error curve.
pub fn simulate_json(request: &str) -> Result<String, String> {
    let req: SimulateRequest = parse(request)?;
    if req.methods.is_empty() {
        return Err("pick at least one method".into());
    }
    let mut curves = Vec::with_capacity(req.methods.len());
    let mut problem = None;
    for &method in &req.methods {
        let cfg = RunConfig {
            seed: req.seed,
            max_iterations: req.max_iterations,
            agents: req.agents,
            tuning: req.tuning,
            params: req.params,
            ..RunConfig::new(req.dataset.clone(), method, req.noise)
        };
        cfg.validate().map_err(|e| e.to_string())?;
        let p = problem_for(&cfg)?;
        let trace = run_rep(&p, &cfg, 0).map_err(|e| format!("{method}: {e}"))?;
        curves.push(Curve {
            method,
            solver: trace.solver,
            rows: thin(trace.rows, MAX_POINTS),
            summary: trace.summary,
        });
        problem = Some(p);
    }
    let p = problem.expect("at least one method ran");
    to_json(&SimulateResponse {
        dataset: p.label.clone(),
        lambda_1: p.spectrum.lambda_1,
        lambda_d: p.spectrum.lambda_d,
        curves,
    })
}

/// IPG error bounds and a bound trace up to `horizon`.
pub fn bounds_json(request: &str) -> Result<String, String> {
    let req: BoundsRequest = parse(request)?;
    let cfg = RunConfig {
        agents: req.agents,
        tuning: req.tuning,
        ..RunConfig::new(req.dataset, Method::Ipg, req.noise)
    };
    cfg.validate().map_err(|e| e.to_string())?;
    let p = problem_for(&cfg)?;
    let mut report = bounds_report(&p, &cfg, req.horizon).map_err(|e| e.to_string())?;
    report.rows = thin(report.rows, MAX_POINTS);
    to_json(&report)
}

/// Extreme eigenvalues, inverse checks and parameter stability.
pub fn spectrum_json(request: &str) -> Result<String, String> {
    let req: SpectrumRequest = parse(request)?;
    let cfg = RunConfig {
        agents: req.agents,
        tuning: req.tuning,
        ..RunConfig::new(req.dataset, Method::Ipg, NoiseKind::None)
    };
    cfg.validate().map_err(|e| e.to_string())?;
    let p = problem_for(&cfg)?;
    to_json(&spectrum_report(&p, &cfg).map_err(|e| e.to_string())?)
}

#[wasm_bindgen]
pub fn simulate(request: &str) -> Result<String, JsValue> {
    simulate_json(request).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen]
pub fn bounds(request: &str) -> Result<String, JsValue> {
    bounds_json(request).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen]
pub fn spectrum(request: &str) -> Result<String, JsValue> {
    spectrum_json(request).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen]
pub fn version() -> String {
    ipg_core::harness::version().to_string()
}
