use std::path::Path;
use std::sync::Mutex;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::config::{NoiseKind, RunConfig};
use super::floats;
use crate::analysis::{theorem1_step_bound, theorem2_gates, u_of_t, BoundInputs, Theorem2Gates};
use crate::dataset::{compute_spectrum, partition, CollectiveData, DatasetSource, Spectrum};
use crate::error::{Error, Result};
use crate::network::Network;
use crate::noise::{draw_observation_noise, ProcessNoiseKind};
use crate::solvers::{apc_projection_spectrum, ApcSpectrum, Aux, Method, Solver, SolverConfig};

/// Version string recorded in every trace.
pub fn version() -> &'static str {
    env!("IPG_BUILD_VERSION")
}

/// The successive-change stopping rule: fire once `window` consecutive
/// changes are all below `tol`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StopRule {
    window: usize,
    tol: f64,
    count: usize,
}

impl StopRule {
    pub fn new(window: usize, tol: f64) -> Self {
        Self { window, tol, count: 0 }
    }

    /// Feeds `||x(t) - x(t-1)||`; returns true when the rule fires.
    pub fn observe(&mut self, delta: f64) -> bool {
        if delta < self.tol {
            self.count += 1;
        } else {
            self.count = 0;
        }
        self.count >= self.window
    }

    pub fn streak(&self) -> usize {
        self.count
    }
}

/// One logged iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub t: usize,
    /// `||x(t) - x*||`, `inf` once diverged.
    #[serde(with = "floats")]
    pub err: f64,
    /// `||x(t) - x(t-1)||`
    #[serde(with = "floats::option")]
    pub step_delta: Option<f64>,
    /// Observation-noise bound on this row's error given the previous one.
    #[serde(with = "floats::option")]
    pub bound_t1: Option<f64>,
    #[serde(with = "floats::option")]
    pub u_t: Option<f64>,
    /// Process-noise bound on this row's error.
    #[serde(with = "floats::option")]
    pub bound_t2: Option<f64>,
    pub diverged: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Converged,
    MaxIterations,
    Diverged,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub dataset: String,
    pub method: Method,
    pub noise: NoiseKind,
    pub rep: usize,
    pub seed: u64,
    #[serde(with = "floats")]
    pub final_error: f64,
    pub iterations: usize,
    pub stop: StopReason,
    /// `eta` (observation) or `omega` (process) as used by the bounds.
    #[serde(with = "floats::option")]
    pub noise_level: Option<f64>,
    /// Largest realized per-agent `||w_b^i||_1` (observation) or mean realized
    /// `||w_x(t)||_1` (process).
    #[serde(with = "floats::option")]
    pub realized_noise_level: Option<f64>,
    pub bfgs_skipped: Option<usize>,
    /// Left out when comparing runs for reproducibility.
    #[serde(with = "floats::option")]
    pub wall_time_s: Option<f64>,
}

/// A complete run: metadata, per-iteration rows and the summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunTrace {
    pub version: String,
    pub config: RunConfig,
    pub solver: SolverConfig,
    pub bound_inputs: Option<BoundInputs>,
    pub theorem2_gates: Option<Theorem2Gates>,
    pub rows: Vec<TraceRow>,
    pub summary: RunSummary,
}

impl RunTrace {
    /// The same trace with the wall time cleared.
    pub fn without_timing(mut self) -> Self {
        self.summary.wall_time_s = None;
        self
    }
}

/// A loaded dataset with its spectrum, shared by every run on it.
#[derive(Debug)]
pub struct Problem {
    pub label: String,
    pub data: CollectiveData,
    pub spectrum: Spectrum,
    apc: Mutex<Vec<(usize, ApcSpectrum)>>,
}

impl Problem {
    /// Loads and checks that `A^T A` is positive definite.
    pub fn load(source: &DatasetSource, data_dir: Option<&Path>) -> Result<Self> {
        let data = source.load(data_dir)?;
        Self::with_label(source.label(), data)
    }

    pub fn for_config(cfg: &RunConfig) -> Result<Self> {
        Self::load(&cfg.source()?, cfg.data_dir.as_deref())
    }

    pub fn with_label(label: impl Into<String>, data: CollectiveData) -> Result<Self> {
        let spectrum = compute_spectrum(&data)?;
        Ok(Self {
            label: label.into(),
            data,
            spectrum,
            apc: Mutex::new(Vec::new()),
        })
    }

    /// Spectrum of the averaged APC projector for `agents` agents, cached.
    pub fn apc_spectrum(&self, agents: usize) -> Result<ApcSpectrum> {
        if let Some((_, s)) = self.lock_apc().iter().find(|(m, _)| *m == agents) {
            return Ok(*s);
        }
        let net = Network::new(partition(&self.data, agents)?)?;
        let s = apc_projection_spectrum(&net)?;
        self.lock_apc().push((agents, s));
        Ok(s)
    }

    fn lock_apc(&self) -> std::sync::MutexGuard<'_, Vec<(usize, ApcSpectrum)>> {
        self.apc.lock().unwrap_or_else(|e| e.into_inner())
    }

    pub fn solver_config(&self, cfg: &RunConfig) -> Result<SolverConfig> {
        let apc = if cfg.needs_apc_spectrum(&self.label) {
            Some(self.apc_spectrum(cfg.agents)?)
        } else {
            None
        };
        cfg.solver_config(&self.label, &self.spectrum, apc.as_ref())
    }

    /// Bound inputs for IPG started at `(x0, k0)`. The common `K(0) = 0` start
    /// skips the SVD: `||K*||_2 = 1 / lambda_d`.
    #[allow(clippy::too_many_arguments)]
    pub fn bound_inputs(
        &self,
        alpha: f64,
        delta: f64,
        m: usize,
        k0: &DMatrix<f64>,
        x0: &DVector<f64>,
        eta: f64,
        omega: f64,
    ) -> Result<BoundInputs> {
        let s = &self.spectrum;
        let x_star = self.data.x_star();
        if k0.iter().all(|&v| v == 0.0) && k0.shape() == s.k_star.shape() && x0.len() == x_star.len() {
            return Ok(BoundInputs {
                lambda_1: s.lambda_1,
                lambda_d: s.lambda_d,
                varrho: s.varrho,
                rho: s.richardson_rate(alpha),
                alpha,
                delta,
                eta,
                omega,
                m,
                d: x_star.len(),
                k_tilde0_fro: s.k_star.norm(),
                k_tilde0_spec: 1.0 / s.lambda_d,
                z0_norm: (x0 - x_star).norm(),
            });
        }
        BoundInputs::from_spectrum(s, alpha, delta, m, k0, x0, x_star, eta, omega)
    }
}

/// Whether a noise setting draws random numbers (and so deserves Monte Carlo
/// repetitions).
pub fn is_random(cfg: &RunConfig, label: &str) -> bool {
    match cfg.noise {
        NoiseKind::None => false,
        NoiseKind::Observation => cfg.observation_settings(label).half_width > 0.0,
        NoiseKind::Process => matches!(cfg.process_settings(label).kind, ProcessNoiseKind::Uniform { .. }),
    }
}

/// Loads the dataset and runs repetition 0.
pub fn run(cfg: &RunConfig) -> Result<RunTrace> {
    cfg.validate()?;
    let problem = Problem::for_config(cfg)?;
    run_rep(&problem, cfg, 0)
}

/// Runs every repetition the configuration asks for (one when the noise is
/// deterministic). Failures stay per repetition.
pub fn run_reps(problem: &Problem, cfg: &RunConfig) -> Vec<Result<RunTrace>> {
    let reps = if is_random(cfg, &problem.label) { cfg.reps } else { 1 };
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        (0..reps).into_par_iter().map(|r| run_rep(problem, cfg, r)).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..reps).map(|r| run_rep(problem, cfg, r)).collect()
    }
}

struct Clock {
    #[cfg(not(target_arch = "wasm32"))]
    start: std::time::Instant,
}

impl Clock {
    fn start() -> Self {
        Self {
            #[cfg(not(target_arch = "wasm32"))]
            start: std::time::Instant::now(),
        }
    }

    fn elapsed(&self) -> Option<f64> {
        #[cfg(not(target_arch = "wasm32"))]
        {
            Some(self.start.elapsed().as_secs_f64())
        }
        #[cfg(target_arch = "wasm32")]
        {
            None
        }
    }
}

/// One repetition of `cfg` on an already loaded problem.
pub fn run_rep(problem: &Problem, cfg: &RunConfig, rep: usize) -> Result<RunTrace> {
    let clock = Clock::start();
    let label = problem.label.as_str();
    let solver_cfg = problem.solver_config(cfg)?;
    let mut shards = partition(&problem.data, cfg.agents)?;
    let d = problem.data.dim();

    let mut noise_level = None;
    let mut realized = None;
    if cfg.noise == NoiseKind::Observation {
        let spec = cfg.observation_spec(label, rep);
        let report = draw_observation_noise(&spec, &mut shards)?;
        noise_level = Some(spec.eta(&shards));
        realized = Some(report.max_realized());
    }
    let process = (cfg.noise == NoiseKind::Process).then(|| cfg.process_spec(label, rep));
    if let Some(p) = &process {
        p.validate()?;
        noise_level = Some(p.omega(d));
    }

    let mut solver = Solver::new(Network::new(shards)?, solver_cfg, process)?;
    let x_star = problem.data.x_star();

    let track_t1 = cfg.method == Method::Ipg && cfg.noise != NoiseKind::Process;
    let track_t2 = cfg.method == Method::Ipg && cfg.noise != NoiseKind::Observation;
    let bound_inputs = if cfg.method == Method::Ipg {
        let k0 = solver
            .state()
            .k
            .clone()
            .ok_or_else(|| Error::Config("IPG state carries no pre-conditioner".into()))?;
        let eta = if cfg.noise == NoiseKind::Observation {
            noise_level.unwrap_or(0.0)
        } else {
            0.0
        };
        let omega = if cfg.noise == NoiseKind::Process {
            noise_level.unwrap_or(0.0)
        } else {
            0.0
        };
        Some(problem.bound_inputs(
            solver_cfg.alpha,
            solver_cfg.delta,
            cfg.agents,
            &k0,
            solver.estimate(),
            eta,
            omega,
        )?)
    } else {
        None
    };
    let gates = bound_inputs.as_ref().map(theorem2_gates);

    let err0 = (solver.estimate() - x_star).norm();
    let mut b2 = bound_inputs.filter(|_| track_t2).map(|b| b.z0_norm + b.omega);
    let mut rows = vec![TraceRow {
        t: 0,
        err: err0,
        step_delta: None,
        bound_t1: None,
        u_t: None,
        bound_t2: b2,
        diverged: false,
    }];

    let mut rule = StopRule::new(cfg.stop_window, cfg.stop_tol);
    let mut prev_x = solver.estimate().clone();
    let mut prev_err = err0;
    let mut process_l1 = 0.0;
    let mut stop = StopReason::MaxIterations;

    while solver.iteration() < cfg.max_iterations {
        let t = solver.iteration() + 1;
        let bound_t1 = match (&bound_inputs, track_t1) {
            (Some(b), true) => theorem1_step_bound(b, prev_err, t - 1).ok(),
            _ => None,
        };
        let u_t = bound_inputs.as_ref().filter(|_| track_t2).map(|b| u_of_t(b, t));
        if let (Some(u), Some(b), Some(inputs)) = (u_t, b2.as_mut(), &bound_inputs) {
            *b = u * *b + inputs.omega;
        }
        match solver.step() {
            Ok(()) => {}
            Err(Error::Diverged { .. }) => {
                rows.push(TraceRow {
                    t,
                    err: f64::INFINITY,
                    step_delta: None,
                    bound_t1,
                    u_t,
                    bound_t2: b2,
                    diverged: true,
                });
                stop = StopReason::Diverged;
                break;
            }
            Err(e) => return Err(e),
        }
        let x = solver.estimate();
        let err = (x - x_star).norm();
        let delta = (x - &prev_x).norm();
        prev_x.copy_from(x);
        prev_err = err;
        process_l1 += solver.state().x_noise_l1;
        let fired = rule.observe(delta);
        let last = fired || t == cfg.max_iterations;
        if t % cfg.record_every == 0 || last {
            rows.push(TraceRow {
                t,
                err,
                step_delta: Some(delta),
                bound_t1,
                u_t,
                bound_t2: b2,
                diverged: false,
            });
        }
        if fired {
            stop = StopReason::Converged;
            break;
        }
    }

    let last = rows.last().expect("trace starts with row 0");
    let iterations = last.t;
    if cfg.noise == NoiseKind::Process && iterations > 0 && stop != StopReason::Diverged {
        realized = Some(process_l1 / iterations as f64);
    }
    let bfgs_skipped = match &solver.state().aux {
        Aux::Bfgs { skipped, .. } => Some(*skipped),
        _ => None,
    };
    let summary = RunSummary {
        dataset: problem.label.clone(),
        method: cfg.method,
        noise: cfg.noise,
        rep,
        seed: cfg.rep_seed(rep),
        final_error: last.err,
        iterations,
        stop,
        noise_level,
        realized_noise_level: realized,
        bfgs_skipped,
        wall_time_s: clock.elapsed(),
    };
    Ok(RunTrace {
        version: version().to_string(),
        config: cfg.clone(),
        solver: solver_cfg,
        bound_inputs,
        theorem2_gates: gates,
        rows,
        summary,
    })
}
