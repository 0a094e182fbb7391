//! Acceptance criteria 1 to 7. Each test prints one `criterion N: PASS|FAIL`
//! line with the measured numbers, then asserts.
//!
//! Run with `cargo test -p ipg-core --test acceptance -- --nocapture`.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};

use ipg_core::analysis::{
    theorem1_asymptote, theorem1_step_checks, theorem2_gates, theorem2_limit, theorem2_series, SampleStats,
};
use ipg_core::dataset::{concatenate, partition, DatasetSource};
use ipg_core::harness::{
    run_grid, run_rep, spectrum_report, trace_csv_string, trace_json_string, NoiseKind, ObservationSettings, Problem,
    ProcessSettings, RunConfig, RunTrace, StopReason, StopRule, Tuning,
};
use ipg_core::network::{sum_vectors, Network};
use ipg_core::noise::ProcessNoiseKind;
use ipg_core::solvers::{agent_gradient, Method, Solver, SolverConfig};

// Tolerances, as stated by the criteria.
const C1_ERR: f64 = 1e-3;
const C1_K_SLACK: f64 = 1e-6;
const C1_SECONDS: f64 = 60.0;
const C2_SEEDS: usize = 20;
const C2_REL: f64 = 0.25;
const C2_ASH_FIVE: f64 = 0.86;
const C2_ASH_APC: f64 = 13.71;
const C3_IPG_MAX: f64 = 1e-4;
const C3_GD_MIN: f64 = 1.0;
const C3_BFGS_AT: f64 = 360.0;
const C3_BFGS_REL: f64 = 0.5;
const C4_REPS: usize = 200;
const C4_SIGMAS: f64 = 3.0;
const C5_REPS: usize = 100;
const C5_SIGMAS: f64 = 3.0;
const C6_ITERS: usize = 1000;
const C6_GRAD_REL: f64 = 1e-10;
const C6_FD: f64 = 1e-5;
const C7_RESIDUAL_PER_D: f64 = 1e-8;
const C7_NORM_REL: f64 = 1e-6;

const DATASETS: [&str; 2] = ["ash608", "gr_30_30"];

fn verdict(n: usize, pass: bool, detail: &str) -> bool {
    println!("criterion {n}: {} {detail}", if pass { "PASS" } else { "FAIL" });
    pass
}

fn load(name: &str) -> Problem {
    Problem::load(&DatasetSource::parse(name).unwrap(), None).unwrap()
}

fn err(x: &DVector<f64>, x_star: &DVector<f64>) -> f64 {
    (x - x_star).norm()
}

struct NoiseFree {
    method: Method,
    min_err_before_stop: f64,
    stopped_at: usize,
    outcome: &'static str,
    k_bound_worst: Option<f64>,
}

/// Runs one solver noise-free with its published parameters, tracking the
/// smallest error up to and including the round on which the stop rule fires.
fn noise_free(p: &Problem, method: Method) -> NoiseFree {
    let cfg = SolverConfig::table_i(method, &p.label).unwrap();
    let net = Network::new(partition(&p.data, 10).unwrap()).unwrap();
    let mut solver = Solver::new(net, cfg, None).unwrap();
    let x_star = p.data.x_star().clone();
    let k_star = &p.spectrum.k_star;
    let rho = p.spectrum.richardson_rate(cfg.alpha);
    let k0 = k_star.norm();
    let mut k_bound_worst: Option<f64> = (method == Method::Ipg).then_some(0.0);
    let mut min_err = err(solver.estimate(), &x_star);
    let mut stop = StopRule::new(20, 1e-4);
    let mut prev = solver.estimate().clone();
    let outcome = loop {
        if solver.iteration() >= 100_000 {
            break "max iterations";
        }
        if solver.step().is_err() {
            break "diverged";
        }
        let t = solver.iteration();
        let x = solver.estimate();
        min_err = min_err.min(err(x, &x_star));
        if let (Some(w), Some(k)) = (k_bound_worst.as_mut(), solver.state().k.as_ref()) {
            let bound = rho.powi(t as i32) * k0 * (1.0 + C1_K_SLACK);
            *w = w.max((k - k_star).norm() / bound);
        }
        let delta = (x - &prev).norm();
        prev.copy_from(x);
        if stop.observe(delta) {
            break "stopped";
        }
    };
    NoiseFree {
        method,
        min_err_before_stop: min_err,
        stopped_at: solver.iteration(),
        outcome,
        k_bound_worst,
    }
}

#[test]
fn criterion_1_noise_free_convergence() {
    let mut all = true;
    for name in DATASETS {
        let p = load(name);
        let start = Instant::now();
        let runs: Vec<NoiseFree> = Method::ALL.iter().map(|&m| noise_free(&p, m)).collect();
        let secs = start.elapsed().as_secs_f64();
        let mut parts = Vec::new();
        let mut ok = secs < C1_SECONDS;
        for r in &runs {
            let reached = r.min_err_before_stop <= C1_ERR;
            ok &= reached;
            parts.push(format!(
                "{}={:.3e}@{}({})",
                r.method, r.min_err_before_stop, r.stopped_at, r.outcome
            ));
            if let Some(w) = r.k_bound_worst {
                ok &= w <= 1.0;
                parts.push(format!("K-bound max ratio {w:.6}"));
            }
        }
        all &= verdict(1, ok, &format!("[{name}] {} in {secs:.1}s", parts.join(" ")));
    }
    assert!(all, "noise-free convergence failed, see the criterion 1 lines");
}

fn observation_grid(name: &str) -> Vec<RunConfig> {
    Method::ALL
        .iter()
        .map(|&m| RunConfig {
            reps: C2_SEEDS,
            record_every: 1_000_000,
            ..RunConfig::new(name, m, NoiseKind::Observation)
        })
        .collect()
}

#[test]
fn criterion_2_observation_noise_table() {
    let mut configs = observation_grid("ash608");
    configs.extend(observation_grid("gr_30_30"));
    let table = run_grid(&configs);
    let mut all = true;

    let mut parts = Vec::new();
    let mut ok = true;
    for m in Method::ALL {
        let row = table.get(NoiseKind::Observation, "ash608", m).unwrap();
        let target = if m == Method::Apc { C2_ASH_APC } else { C2_ASH_FIVE };
        let within = (row.mc_mean - target).abs() <= C2_REL * target;
        ok &= within && row.error.is_none() && row.reps == C2_SEEDS;
        parts.push(format!(
            "{m}={:.4}(single {:.4}, target {target})",
            row.mc_mean, row.single_run
        ));
    }
    all &= verdict(2, ok, &format!("[ash608 within 25%] {}", parts.join(" ")));

    for name in DATASETS {
        let ipg = table.get(NoiseKind::Observation, name, Method::Ipg).unwrap().mc_mean;
        let mut parts = vec![format!("ipg={ipg:.4}")];
        let mut ok = ipg.is_finite();
        for m in Method::ALL.into_iter().filter(|&m| m != Method::Ipg) {
            let other = table.get(NoiseKind::Observation, name, m).unwrap().mc_mean;
            ok &= ipg <= other;
            parts.push(format!("{m}={other:.4}(ipg-{m} {:+.1e})", ipg - other));
        }
        all &= verdict(2, ok, &format!("[{name} ordering ipg <= all] {}", parts.join(" ")));
    }
    assert!(all, "observation-noise table failed, see the criterion 2 lines");
}

#[test]
fn criterion_3_process_noise_table() {
    let mut all = true;
    for name in DATASETS {
        let p = load(name);
        let tr = run_rep(&p, &RunConfig::new(name, Method::Ipg, NoiseKind::Process), 0).unwrap();
        let e = tr.summary.final_error;
        all &= verdict(
            3,
            e <= C3_IPG_MAX,
            &format!(
                "[{name} ipg round-off] final error {e:.3e} after {} ({:?})",
                tr.summary.iterations, tr.summary.stop
            ),
        );
    }

    let p = load("gr_30_30");
    let tr = run_rep(&p, &RunConfig::new("gr_30_30", Method::Gd, NoiseKind::Process), 0).unwrap();
    let e = tr.summary.final_error;
    all &= verdict(
        3,
        e > C3_GD_MIN,
        &format!(
            "[gr_30_30 gd round-off] final error {e:.4} after {} ({:?})",
            tr.summary.iterations, tr.summary.stop
        ),
    );

    let hi = (C3_BFGS_AT * (1.0 + C3_BFGS_REL)) as usize;
    let lo = (C3_BFGS_AT * (1.0 - C3_BFGS_REL)) as usize;
    let p = load("ash608");
    let cfg = RunConfig {
        max_iterations: hi,
        ..RunConfig::new("ash608", Method::Bfgs, NoiseKind::Process)
    };
    let tr = run_rep(&p, &cfg, 0).unwrap();
    let s = &tr.summary;
    let flagged = s.stop == StopReason::Diverged && tr.rows.last().is_some_and(|r| r.diverged);
    all &= verdict(
        3,
        flagged && (lo..=hi).contains(&s.iterations),
        &format!(
            "[ash608 bfgs divergence in {lo}..={hi}] stop {:?} at {} final error {:.3e}",
            s.stop, s.iterations, s.final_error
        ),
    );
    assert!(all, "process-noise table failed, see the criterion 3 lines");
}

fn error_paths(traces: &[RunTrace]) -> Vec<Vec<f64>> {
    traces.iter().map(|t| t.rows.iter().map(|r| r.err).collect()).collect()
}

#[test]
fn criterion_4_observation_bound() {
    let dataset = "synthetic:50,10,4,11";
    let cfg = RunConfig {
        agents: 5,
        tuning: Tuning::Rate,
        observation: Some(ObservationSettings {
            half_width: 0.1,
            eta: None,
        }),
        max_iterations: 200,
        stop_tol: f64::MIN_POSITIVE,
        ..RunConfig::new(dataset, Method::Ipg, NoiseKind::Observation)
    };
    let p = Problem::for_config(&cfg).unwrap();
    assert_eq!((p.data.dim(), cfg.agents), (10, 5));
    let traces: Vec<RunTrace> = (0..C4_REPS).map(|r| run_rep(&p, &cfg, r).unwrap()).collect();
    let inputs = traces[0].bound_inputs.unwrap();

    // Independent evaluation of the one-step bound for the logged column.
    let step = |z: f64, t: usize| {
        let decay = inputs.k_tilde0_fro * inputs.rho.powi(t as i32 + 1);
        let m = inputs.m as f64;
        (1.0 - inputs.delta + inputs.delta * inputs.lambda_1 * decay) * z
            + inputs.delta * inputs.eta * m * inputs.lambda_1.sqrt() * decay
            + inputs.delta * inputs.eta * m / inputs.lambda_d.sqrt()
    };
    let logged_ok = traces.iter().all(|tr| {
        tr.rows.windows(2).all(|w| {
            let expect = step(w[0].err, w[0].t);
            w[1].bound_t1
                .is_some_and(|b| (b - expect).abs() <= 1e-12 * expect.max(1.0))
        })
    });

    let paths = error_paths(&traces);
    let checks = theorem1_step_checks(&inputs, &paths, C4_SIGMAS).unwrap();
    let violations = checks.iter().filter(|c| !c.ok).count();
    let worst = checks
        .iter()
        .map(|c| c.mean_slack / c.se.max(f64::MIN_POSITIVE))
        .fold(f64::INFINITY, f64::min);
    let finals: Vec<f64> = traces.iter().map(|t| t.summary.final_error).collect();
    let limit = SampleStats::from_samples(&finals).unwrap().mean;
    let asymptote = theorem1_asymptote(&inputs).unwrap();
    let ok = logged_ok && violations == 0 && !checks.is_empty() && limit <= asymptote;
    let detail = format!(
        "{} steps x {C4_REPS} reps, violations beyond {C4_SIGMAS} SE {violations}, min slack/SE {worst:.2}, \
         limiting error {limit:.4e} <= {asymptote:.4e}, logged column matches {logged_ok}",
        checks.len()
    );
    assert!(verdict(4, ok, &detail), "{detail}");
}

#[test]
fn criterion_5_process_bound() {
    let horizon = 300;
    let cfg = RunConfig {
        agents: 5,
        tuning: Tuning::Rate,
        process: Some(ProcessSettings {
            kind: ProcessNoiseKind::Uniform { low: 0.0, high: 1e-3 },
            omega: None,
        }),
        max_iterations: horizon,
        stop_tol: f64::MIN_POSITIVE,
        ..RunConfig::new("synthetic:40,5,2,5", Method::Ipg, NoiseKind::Process)
    };
    let p = Problem::for_config(&cfg).unwrap();
    let traces: Vec<RunTrace> = (0..C5_REPS).map(|r| run_rep(&p, &cfg, r).unwrap()).collect();
    let inputs = traces[0].bound_inputs.unwrap();
    let gates = theorem2_gates(&inputs);
    let paths = error_paths(&traces);
    assert!(paths.iter().all(|p| p.len() == horizon + 1), "fixed-horizon runs");
    let bound = theorem2_series(&inputs, horizon);
    let mut worst_t = 0;
    let mut worst_gap = f64::NEG_INFINITY;
    for t in 0..=horizon {
        let col: Vec<f64> = paths.iter().map(|e| e[t]).collect();
        let s = SampleStats::from_samples(&col).unwrap();
        let gap = s.mean - (bound[t] + C5_SIGMAS * s.se);
        if gap > worst_gap {
            worst_gap = gap;
            worst_t = t;
        }
    }
    let tail: Vec<f64> = paths.iter().flat_map(|e| e[horizon - 50..].iter().copied()).collect();
    let long_run = SampleStats::from_samples(&tail).unwrap().mean;
    let limit = theorem2_limit(&inputs);
    let ok = gates.satisfied && worst_gap <= 0.0 && long_run <= limit;
    let detail = format!(
        "gates rho {:.4} < {:.4}, omega {:.3e} < {:.3e} ({}); worst mean - (bound + 3 SE) = {worst_gap:.3e} at t={worst_t}; \
         long-run mean {long_run:.4e} <= limit {limit:.4e}",
        inputs.rho, gates.rho_bd, inputs.omega, gates.omega_bd, gates.satisfied
    );
    assert!(verdict(5, ok, &detail), "{detail}");
}

#[test]
fn criterion_6_structural_identities() {
    let p = load("ash608");
    let x_star = p.data.x_star().clone();
    let d = p.data.dim();
    let mut fails = Vec::new();

    let gd_cfg = SolverConfig::table_i(Method::Gd, "ash608").unwrap();
    let mut frozen = SolverConfig::new(Method::Ipg).with_alpha(1.0).with_delta(gd_cfg.alpha);
    frozen.freeze_preconditioner = true;
    let net = || Network::new(partition(&p.data, 10).unwrap()).unwrap();
    let mut gd = Solver::new(net(), gd_cfg, None).unwrap();
    let mut ipg = Solver::with_start(net(), frozen, None, DVector::zeros(d), Some(DMatrix::identity(d, d))).unwrap();
    let mut identical = true;
    for _ in 0..C6_ITERS {
        gd.step().unwrap();
        ipg.step().unwrap();
        identical &= gd
            .estimate()
            .iter()
            .zip(ipg.estimate().iter())
            .all(|(a, b)| a.to_bits() == b.to_bits());
    }
    if !identical {
        fails.push("gd != frozen ipg");
    }

    let a = p.data.a();
    let b = p.data.b();
    let network = net();
    let mut worst_rel = 0.0f64;
    let mut worst_fd = 0.0f64;
    for k in 0..5 {
        let x = DVector::from_fn(d, |i, _| ((i * 7 + k * 13) % 11) as f64 / 5.0 - 1.0) + &x_star;
        let parts = network
            .execute_round(0, |ctx| agent_gradient(ctx.shard(), &x).unwrap(), |g| g)
            .unwrap();
        let total = sum_vectors(d, &parts);
        let direct = a.transpose() * (a * &x - b);
        worst_rel = worst_rel.max((&total - &direct).norm() / direct.norm());

        let f = |v: &DVector<f64>| 0.5 * (a * v - b).norm_squared();
        let h = 1e-5;
        for j in (0..d).step_by(17) {
            let mut up = x.clone();
            let mut down = x.clone();
            up[j] += h;
            down[j] -= h;
            let fd = (f(&up) - f(&down)) / (2.0 * h);
            worst_fd = worst_fd.max((fd - total[j]).abs() / total[j].abs().max(1.0));
        }
    }
    if worst_rel > C6_GRAD_REL {
        fails.push("gradient sum");
    }
    if worst_fd > C6_FD {
        fails.push("finite differences");
    }

    let shards = partition(&p.data, 7).unwrap();
    let (a2, b2) = concatenate(&shards).unwrap();
    let round_trip = &a2 == a && &b2 == b;
    if !round_trip {
        fails.push("shard round trip");
    }

    let cfg = RunConfig {
        max_iterations: 200,
        ..RunConfig::new("synthetic:60,8,5,2", Method::Nag, NoiseKind::Observation)
    };
    let q = Problem::for_config(&cfg).unwrap();
    let t1 = run_rep(&q, &cfg, 3).unwrap().without_timing();
    let t2 = run_rep(&q, &cfg, 3).unwrap().without_timing();
    let same = trace_json_string(&t1).unwrap() == trace_json_string(&t2).unwrap()
        && trace_csv_string(&t1).unwrap() == trace_csv_string(&t2).unwrap();
    if !same {
        fails.push("determinism");
    }

    let detail = format!(
        "gd==frozen ipg over {C6_ITERS} bit-exact {identical}; grad rel err {worst_rel:.2e}; fd err {worst_fd:.2e}; \
         shard round trip {round_trip}; double run byte-exact {same}"
    );
    assert!(verdict(6, fails.is_empty(), &detail), "{detail}: {fails:?}");
}

#[test]
fn criterion_7_spectrum() {
    let mut all = true;
    for name in DATASETS {
        let p = load(name);
        let cfg = RunConfig::new(name, Method::Ipg, NoiseKind::None);
        let r = spectrum_report(&p, &cfg).unwrap();

        // Recomputed here from the dense matrices rather than read back.
        let d = p.data.dim();
        let a = p.data.a();
        let residual = (&p.spectrum.k_star * (a.transpose() * a) - DMatrix::<f64>::identity(d, d)).norm();
        let norm = (&p.spectrum.k_star * a.transpose())
            .svd(false, false)
            .singular_values
            .max();
        let target = 1.0 / p.spectrum.lambda_d.sqrt();
        let rel = (norm - target).abs() / target;
        let ok = residual <= C7_RESIDUAL_PER_D * d as f64
            && rel <= C7_NORM_REL
            && (r.kstar_residual_fro - residual).abs() <= 1e-12 * d as f64;
        all &= verdict(
            7,
            ok,
            &format!(
                "[{name}] ||K*H - I||_F {residual:.3e} (limit {:.1e}), ||K*A^T||_2 {norm:.9e} vs {target:.9e} rel {rel:.2e}",
                C7_RESIDUAL_PER_D * d as f64
            ),
        );
    }
    assert!(all, "spectrum checks failed, see the criterion 7 lines");
}
