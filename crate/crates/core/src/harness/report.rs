use nalgebra::{Complex, DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::config::{NoiseKind, RunConfig};
use super::floats;
use super::run::{Problem, TraceRow};
use crate::analysis::{
    gd_observation_asymptote, gd_process_asymptote, theorem1_asymptote, theorem1_step_bound, theorem2_gates,
    theorem2_limit, u_limit, u_of_t, BoundInputs, Theorem2Gates,
};
use crate::dataset::{partition, Spectrum};
use crate::error::Result;
use crate::solvers::{ApcSpectrum, Method, SolverConfig};

/// Largest root magnitude of `z^2 - b z + c`.
fn quadratic_radius(b: f64, c: f64) -> f64 {
    let disc = Complex::new(b * b - 4.0 * c, 0.0).sqrt();
    let r1 = (Complex::new(b, 0.0) + disc) * 0.5;
    let r2 = (Complex::new(b, 0.0) - disc) * 0.5;
    r1.norm().max(r2.norm())
}

/// Linear convergence factor of a noise-free method, taken at the extreme
/// eigenvalues of `A^T A`. BFGS has none and returns `None`.
pub fn asymptotic_rate(cfg: &SolverConfig, spectrum: &Spectrum, apc: Option<&ApcSpectrum>) -> Option<f64> {
    let ends = [spectrum.lambda_1, spectrum.lambda_d];
    let worst = |f: &dyn Fn(f64) -> f64| ends.iter().map(|&l| f(l)).fold(0.0, f64::max);
    match cfg.method {
        Method::Ipg | Method::Gd => Some(spectrum.richardson_rate(cfg.alpha)),
        Method::Hbm => Some(worst(&|l| quadratic_radius(1.0 + cfg.beta - cfg.alpha * l, cfg.beta))),
        Method::Nag => Some(worst(&|l| {
            let c = 1.0 - cfg.alpha * l;
            quadratic_radius((1.0 + cfg.beta) * c, cfg.beta * c)
        })),
        Method::Apc => apc.map(|a| a.rate(cfg.gamma, cfg.eta_apc)),
        Method::Bfgs => None,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamCheck {
    pub method: Method,
    pub config: SolverConfig,
    /// For IPG this is the rate of the pre-conditioner iteration.
    pub rate: Option<f64>,
    pub stable: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumReport {
    pub dataset: String,
    pub source: String,
    pub rows: usize,
    pub d: usize,
    pub lambda_1: f64,
    pub lambda_d: f64,
    pub condition_number: f64,
    pub varrho: f64,
    /// `||K* A^T A - I||_F`
    pub kstar_residual_fro: f64,
    /// `||K* A^T||_2`, which should equal `1 / sqrt(lambda_d)`.
    pub kstar_at_norm: f64,
    pub inv_sqrt_lambda_d: f64,
    pub agents: usize,
    pub apc: ApcSpectrum,
    pub params: Vec<ParamCheck>,
}

/// Spectrum, inverse checks and the stability of each method's default
/// parameters on a problem split over `cfg.agents` agents.
pub fn spectrum_report(problem: &Problem, cfg: &RunConfig) -> Result<SpectrumReport> {
    let s = &problem.spectrum;
    let a = problem.data.a();
    let d = problem.data.dim();
    let residual = &s.k_star * &s.gram - DMatrix::<f64>::identity(d, d);
    let kat = &s.k_star * a.transpose();
    let kstar_at_norm = kat.svd(false, false).singular_values.max();
    let apc = problem.apc_spectrum(cfg.agents)?;
    let mut params = Vec::new();
    for method in Method::ALL {
        let c = RunConfig { method, ..cfg.clone() };
        let solver = c.solver_config(&problem.label, s, Some(&apc))?;
        let rate = asymptotic_rate(&solver, s, Some(&apc));
        params.push(ParamCheck {
            method,
            config: solver,
            rate,
            stable: rate.map(|r| r < 1.0),
        });
    }
    Ok(SpectrumReport {
        dataset: problem.label.clone(),
        source: problem.data.name().to_string(),
        rows: problem.data.rows(),
        d,
        lambda_1: s.lambda_1,
        lambda_d: s.lambda_d,
        condition_number: s.condition_number(),
        varrho: s.varrho,
        kstar_residual_fro: residual.norm(),
        kstar_at_norm,
        inv_sqrt_lambda_d: 1.0 / s.lambda_d.sqrt(),
        agents: cfg.agents,
        apc,
        params,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundsReport {
    pub dataset: String,
    pub noise: NoiseKind,
    pub inputs: BoundInputs,
    /// `delta eta m / sqrt(lambda_d)` (observation noise).
    #[serde(with = "floats::option")]
    pub theorem1_asymptote: Option<f64>,
    #[serde(with = "floats::option")]
    pub gd_observation_asymptote: Option<f64>,
    pub gates: Theorem2Gates,
    #[serde(with = "floats")]
    pub theorem2_limit: f64,
    #[serde(with = "floats")]
    pub u_limit: f64,
    /// Process-noise asymptote of GD with its default step, when GD contracts.
    #[serde(with = "floats::option")]
    pub gd_process_asymptote: Option<f64>,
    /// Bound-only trace: `err` is `nan`, `bound_t1` unrolls the one-step
    /// observation bound from `||z(0)||`, `bound_t2` is the process bound.
    pub rows: Vec<TraceRow>,
}

/// Closed-form bounds for IPG on `cfg`'s dataset and noise, starting from
/// `x(0) = 0`, `K(0) = 0`, with a bound trace over `0..=horizon`.
pub fn bounds_report(problem: &Problem, cfg: &RunConfig, horizon: usize) -> Result<BoundsReport> {
    let ipg_cfg = RunConfig {
        method: Method::Ipg,
        ..cfg.clone()
    };
    let solver = problem.solver_config(&ipg_cfg)?;
    let label = problem.label.as_str();
    let d = problem.data.dim();
    let eta = match cfg.noise {
        NoiseKind::Observation => {
            let shards = partition(&problem.data, cfg.agents)?;
            cfg.observation_spec(label, 0).eta(&shards)
        }
        _ => 0.0,
    };
    let omega = match cfg.noise {
        NoiseKind::Process => ipg_cfg.process_spec(label, 0).omega(d),
        _ => 0.0,
    };
    let inputs = problem.bound_inputs(
        solver.alpha,
        solver.delta,
        cfg.agents,
        &DMatrix::zeros(d, d),
        &DVector::zeros(d),
        eta,
        omega,
    )?;
    let gates = theorem2_gates(&inputs);

    let gd_cfg = RunConfig {
        method: Method::Gd,
        ..cfg.clone()
    };
    let gd_step = problem.solver_config(&gd_cfg)?.alpha;
    let gd_omega = match cfg.noise {
        NoiseKind::Process => gd_cfg.process_spec(label, 0).omega(d),
        _ => 0.0,
    };

    let track_t1 = cfg.noise != NoiseKind::Process;
    let track_t2 = cfg.noise != NoiseKind::Observation;
    let mut rows = Vec::with_capacity(horizon + 1);
    let mut b1 = Some(inputs.z0_norm);
    let mut b2 = inputs.z0_norm + inputs.omega;
    rows.push(TraceRow {
        t: 0,
        err: f64::NAN,
        step_delta: None,
        bound_t1: b1.filter(|_| track_t1),
        u_t: None,
        bound_t2: track_t2.then_some(b2),
        diverged: false,
    });
    for t in 1..=horizon {
        b1 = b1.and_then(|z| theorem1_step_bound(&inputs, z, t - 1).ok());
        let u = u_of_t(&inputs, t);
        b2 = u * b2 + inputs.omega;
        rows.push(TraceRow {
            t,
            err: f64::NAN,
            step_delta: None,
            bound_t1: b1.filter(|_| track_t1),
            u_t: track_t2.then_some(u),
            bound_t2: track_t2.then_some(b2),
            diverged: false,
        });
    }

    Ok(BoundsReport {
        dataset: problem.label.clone(),
        noise: cfg.noise,
        theorem1_asymptote: theorem1_asymptote(&inputs).ok(),
        gd_observation_asymptote: gd_observation_asymptote(&inputs).ok(),
        gates,
        theorem2_limit: theorem2_limit(&inputs),
        u_limit: u_limit(&inputs),
        gd_process_asymptote: gd_process_asymptote(inputs.lambda_1, inputs.lambda_d, gd_step, gd_omega).ok(),
        inputs,
        rows,
    })
}
