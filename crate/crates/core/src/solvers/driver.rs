use nalgebra::{DMatrix, DVector};

use super::agent::{agent_gradient, agent_r_block, sum_r_blocks, RBlock};
use super::apc::apc_local_step;
use super::update::{bfgs_update, gd_update, hbm_update, ipg_update, nag_extrapolate, nag_update};
use super::{Aux, BfgsStep, Method, ServerState, SolverConfig};
use crate::error::{Error, Result};
use crate::network::{sum_vectors, Network};
use crate::noise::{var, ProcessNoiseSpec};

/// Runs one solver over a network, one synchronous round per [`Solver::step`].
#[derive(Debug)]
pub struct Solver {
    network: Network,
    config: SolverConfig,
    noise: Option<ProcessNoiseSpec>,
    state: ServerState,
}

impl Solver {
    /// Starts from `x(0) = 0`, `K(0) = 0` (IPG), `M(0) = I` (BFGS), or the APC
    /// local minimum-norm solutions. Under process noise the initial iterates
    /// are corrupted like every later one.
    pub fn new(network: Network, config: SolverConfig, noise: Option<ProcessNoiseSpec>) -> Result<Self> {
        let d = network.dim();
        Self::with_start(network, config, noise, DVector::zeros(d), None)
    }

    /// As [`Solver::new`] with an explicit `x(0)` and, for IPG, `K(0)`
    /// (zero when `None`). APC ignores `x0`.
    pub fn with_start(
        network: Network,
        config: SolverConfig,
        noise: Option<ProcessNoiseSpec>,
        x0: DVector<f64>,
        k0: Option<DMatrix<f64>>,
    ) -> Result<Self> {
        config.validate()?;
        if let Some(n) = &noise {
            n.validate()?;
        }
        let d = network.dim();
        if x0.len() != d {
            return Err(Error::Dimension(format!("x(0) has length {}, expected {d}", x0.len())));
        }
        let corrupt_v = |mut v: DVector<f64>, id: u64| {
            if let Some(n) = &noise {
                n.corrupt_vector(&mut v, id, 0);
            }
            v
        };
        let corrupt_m = |mut m: DMatrix<f64>, base: u64| {
            if let Some(n) = &noise {
                n.corrupt_matrix(&mut m, base, 0);
            }
            m
        };
        let state = match config.method {
            Method::Ipg => {
                let k0 = k0.unwrap_or_else(|| DMatrix::zeros(d, d));
                if k0.shape() != (d, d) {
                    return Err(Error::Dimension(format!(
                        "K(0) is {:?}, expected {d} x {d}",
                        k0.shape()
                    )));
                }
                ServerState {
                    t: 0,
                    x: corrupt_v(x0, var::X),
                    k: Some(corrupt_m(k0, var::K_BASE)),
                    aux: Aux::None,
                    x_noise_l1: 0.0,
                }
            }
            Method::Gd => ServerState {
                t: 0,
                x: corrupt_v(x0, var::X),
                k: None,
                aux: Aux::None,
                x_noise_l1: 0.0,
            },
            Method::Nag | Method::Hbm => {
                let x = corrupt_v(x0, var::X);
                ServerState {
                    t: 0,
                    aux: Aux::Momentum { prev: x.clone() },
                    x,
                    k: None,
                    x_noise_l1: 0.0,
                }
            }
            Method::Bfgs => ServerState {
                t: 0,
                x: corrupt_v(x0, var::X),
                k: None,
                aux: Aux::Bfgs {
                    m: corrupt_m(DMatrix::identity(d, d), var::M_BASE),
                    prev: None,
                    skipped: 0,
                },
                x_noise_l1: 0.0,
            },
            Method::Apc => {
                let locals = network.execute_round(
                    0,
                    |ctx| {
                        let mut v = ctx.projector().min_norm_solution(ctx.shard());
                        if let Some(n) = &noise {
                            n.corrupt_vector(&mut v, var::LOCAL_BASE + ctx.agent_id() as u64, 0);
                        }
                        v
                    },
                    |locals| locals,
                )?;
                let mean = sum_vectors(d, &locals) / locals.len() as f64;
                ServerState {
                    t: 0,
                    x: corrupt_v(mean, var::X),
                    k: None,
                    aux: Aux::Apc { locals },
                    x_noise_l1: 0.0,
                }
            }
        };
        let solver = Self {
            network,
            config,
            noise,
            state,
        };
        solver.check_divergence()?;
        Ok(solver)
    }

    pub fn config(&self) -> &SolverConfig {
        &self.config
    }

    pub fn network(&self) -> &Network {
        &self.network
    }

    pub fn state(&self) -> &ServerState {
        &self.state
    }

    /// Current estimate `x(t)`.
    pub fn estimate(&self) -> &DVector<f64> {
        &self.state.x
    }

    pub fn iteration(&self) -> usize {
        self.state.t
    }

    fn check_divergence(&self) -> Result<()> {
        if self.state.is_diverged() {
            return Err(Error::Diverged { t: self.state.t });
        }
        Ok(())
    }

    /// Executes one round. On [`Error::Diverged`] the state is left at the
    /// offending iterate.
    pub fn step(&mut self) -> Result<()> {
        let noise = self.noise.as_ref();
        let cfg = &self.config;
        let d = self.network.dim();
        let t = self.state.t;
        let gradient_round = |net: &Network, at: &DVector<f64>| {
            net.execute_round(
                t,
                |ctx| agent_gradient(ctx.shard(), at).unwrap_or_else(|_| DVector::from_element(d, f64::NAN)),
                |gs| sum_vectors(d, &gs),
            )
        };
        let next = match cfg.method {
            Method::Ipg => {
                let k = self
                    .state
                    .k
                    .as_ref()
                    .ok_or_else(|| Error::Config("IPG state carries no pre-conditioner".into()))?;
                let x = &self.state.x;
                if cfg.freeze_preconditioner {
                    let g = gradient_round(&self.network, x)?;
                    ipg_update(&self.state, &g, None, cfg, noise)?
                } else {
                    let (g, r) = self.network.execute_round(
                        t,
                        |ctx| {
                            let shard = ctx.shard();
                            let g = agent_gradient(shard, x).unwrap_or_else(|_| DVector::from_element(d, f64::NAN));
                            let r = agent_r_block(shard, k, ctx.agent_count()).unwrap_or_else(|_| RBlock::poisoned(d));
                            (g, r)
                        },
                        |replies| {
                            (
                                sum_vectors(d, replies.iter().map(|r| &r.0)),
                                sum_r_blocks(d, replies.iter().map(|r| &r.1)),
                            )
                        },
                    )?;
                    ipg_update(&self.state, &g, Some(&r), cfg, noise)?
                }
            }
            Method::Gd => {
                let g = gradient_round(&self.network, &self.state.x)?;
                gd_update(&self.state, &g, cfg, noise)?
            }
            Method::Hbm => {
                let g = gradient_round(&self.network, &self.state.x)?;
                hbm_update(&self.state, &g, cfg, noise)?
            }
            Method::Nag => {
                let y = nag_extrapolate(&self.state, cfg, noise);
                let g = gradient_round(&self.network, &y)?;
                nag_update(&self.state, &y, &g, cfg, noise)?
            }
            Method::Bfgs => {
                let g = gradient_round(&self.network, &self.state.x)?;
                let net = &self.network;
                let step_length = |p: &DVector<f64>| match cfg.bfgs_step {
                    BfgsStep::Unit => Ok(1.0),
                    BfgsStep::Exact => {
                        // Minimizer of the quadratic along p: -p^T G / ||A p||^2.
                        let curvature = net.execute_round(
                            t,
                            |ctx| ctx.shard().sparse().mul_vec(p).norm_squared(),
                            |parts| parts.iter().sum::<f64>(),
                        )?;
                        let slope = p.dot(&g);
                        Ok(if curvature > 0.0 { -slope / curvature } else { 1.0 })
                    }
                };
                bfgs_update(&self.state, &g, step_length, noise)?
            }
            Method::Apc => {
                let Aux::Apc { locals } = &self.state.aux else {
                    return Err(Error::Config("APC state carries no local iterates".into()));
                };
                let xbar = &self.state.x;
                let t1 = t + 1;
                let new_locals = self.network.execute_round(
                    t,
                    |ctx| {
                        let i = ctx.agent_id();
                        // Locals are stored in agent order, which is id order.
                        let pos = ctx.agent_index();
                        let mut v = apc_local_step(ctx.projector(), ctx.shard(), &locals[pos], xbar, cfg.gamma);
                        if let Some(n) = noise {
                            n.corrupt_vector(&mut v, var::LOCAL_BASE + i as u64, t1 as u64);
                        }
                        v
                    },
                    |v| v,
                )?;
                let m = new_locals.len() as f64;
                let avg = sum_vectors(d, &new_locals);
                let clean = avg * (cfg.eta_apc / m) + xbar * (1.0 - cfg.eta_apc);
                let mut x = clean.clone();
                if let Some(n) = noise {
                    n.corrupt_vector(&mut x, var::X, t1 as u64);
                }
                let x_noise_l1 = (&x - clean).lp_norm(1);
                ServerState {
                    t: t1,
                    x,
                    k: None,
                    aux: Aux::Apc { locals: new_locals },
                    x_noise_l1,
                }
            }
        };
        self.state = next;
        self.check_divergence()
    }
}
