//! Server-side update rules for IPG and the baseline solvers, and a driver
//! that runs them round by round over a [`Network`].

mod agent;
mod apc;
mod driver;
mod update;

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dataset::Spectrum;
use crate::error::{Error, Result};

pub use agent::{agent_gradient, agent_r_block, agent_r_vectors, sum_r_blocks, RBlock};
pub use apc::{apc_local_step, apc_projection_spectrum, ApcSpectrum};
pub use driver::Solver;
pub use update::{bfgs_inverse_update, bfgs_update, gd_update, hbm_update, ipg_update, nag_extrapolate, nag_update};

/// An iterate whose Euclidean norm exceeds this is treated as divergent.
pub const DIVERGENCE_NORM: f64 = 1e12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Ipg,
    Gd,
    Nag,
    Hbm,
    Apc,
    Bfgs,
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::Ipg,
        Method::Gd,
        Method::Nag,
        Method::Hbm,
        Method::Apc,
        Method::Bfgs,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Ipg => "ipg",
            Method::Gd => "gd",
            Method::Nag => "nag",
            Method::Hbm => "hbm",
            Method::Apc => "apc",
            Method::Bfgs => "bfgs",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown method `{s}` (expected ipg, gd, nag, hbm, apc or bfgs)"
                ))
            })
    }
}

/// How far BFGS moves along its search direction.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BfgsStep {
    /// Always 1.
    Unit,
    /// The exact minimizer of the quadratic cost along the direction, from
    /// one extra round in which agents report `||A_i p||^2`.
    #[default]
    Exact,
}

/// Parameters of one solver. Fields a method does not use are ignored.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub method: Method,
    /// Step size of GD/NAG/HBM, or the pre-conditioner rate of IPG.
    pub alpha: f64,
    /// IPG estimate step.
    pub delta: f64,
    /// Momentum of NAG/HBM.
    pub beta: f64,
    /// APC agent relaxation.
    pub gamma: f64,
    /// APC server relaxation.
    pub eta_apc: f64,
    /// IPG only: keep `K` at its initial value instead of updating it.
    #[serde(default)]
    pub freeze_preconditioner: bool,
    #[serde(default)]
    pub bfgs_step: BfgsStep,
}

impl SolverConfig {
    pub fn new(method: Method) -> Self {
        Self {
            method,
            alpha: 0.0,
            delta: 1.0,
            beta: 0.0,
            gamma: 1.0,
            eta_apc: 1.0,
            freeze_preconditioner: false,
            bfgs_step: BfgsStep::Exact,
        }
    }

    pub fn with_alpha(mut self, alpha: f64) -> Self {
        self.alpha = alpha;
        self
    }

    pub fn with_delta(mut self, delta: f64) -> Self {
        self.delta = delta;
        self
    }

    pub fn with_beta(mut self, beta: f64) -> Self {
        self.beta = beta;
        self
    }

    pub fn with_apc(mut self, gamma: f64, eta: f64) -> Self {
        self.gamma = gamma;
        self.eta_apc = eta;
        self
    }

    /// The published tuning for the two benchmark datasets, keyed by the
    /// dataset label (`ash608` or `gr_30_30`).
    pub fn table_i(method: Method, dataset: &str) -> Option<Self> {
        let base = Self::new(method);
        let cfg = match (dataset, method) {
            ("ash608", Method::Ipg) => base.with_alpha(0.1163).with_delta(1.0),
            ("ash608", Method::Gd) => base.with_alpha(0.1163),
            ("ash608", Method::Nag) => base.with_alpha(0.08).with_beta(0.5),
            ("ash608", Method::Hbm) => base.with_alpha(0.15).with_beta(0.29),
            ("ash608", Method::Apc) => base.with_apc(1.02, 5.27),
            ("gr_30_30", Method::Ipg) => base.with_alpha(0.014).with_delta(1.0),
            ("gr_30_30", Method::Gd) => base.with_alpha(0.014),
            ("gr_30_30", Method::Nag) => base.with_alpha(0.009).with_beta(0.99),
            ("gr_30_30", Method::Hbm) => base.with_alpha(0.03).with_beta(0.98),
            ("gr_30_30", Method::Apc) => base.with_apc(1.09, 12.8),
            (_, Method::Bfgs) => base,
            _ => return None,
        };
        Some(cfg)
    }

    /// Textbook rate-optimal parameters for a quadratic with the given
    /// spectrum. APC needs the spectrum of the averaged projector as well.
    pub fn tuned(method: Method, spectrum: &Spectrum, apc: Option<&ApcSpectrum>) -> Result<Self> {
        let (l1, ld) = (spectrum.lambda_1, spectrum.lambda_d);
        let kappa = l1 / ld;
        let base = Self::new(method);
        Ok(match method {
            Method::Ipg => base.with_alpha(2.0 / (l1 + ld)).with_delta(1.0),
            Method::Gd => base.with_alpha(2.0 / (l1 + ld)),
            Method::Nag => {
                let r = (3.0 * kappa + 1.0).sqrt();
                base.with_alpha(4.0 / (3.0 * l1 + ld)).with_beta((r - 2.0) / (r + 2.0))
            }
            Method::Hbm => {
                let (s1, sd) = (l1.sqrt(), ld.sqrt());
                let b = (s1 - sd) / (s1 + sd);
                base.with_alpha(4.0 / ((s1 + sd) * (s1 + sd))).with_beta(b * b)
            }
            Method::Apc => {
                let apc = apc.ok_or_else(|| Error::Config("APC tuning needs the projector spectrum".into()))?;
                let (gamma, eta) = apc.optimal_parameters();
                base.with_apc(gamma, eta)
            }
            Method::Bfgs => base,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} must be positive and finite, got {v}")))
            }
        };
        match self.method {
            Method::Ipg => {
                positive("alpha", self.alpha)?;
                if !(self.delta > 0.0 && self.delta <= 1.0) {
                    return Err(Error::Config(format!("delta must lie in (0, 1], got {}", self.delta)));
                }
            }
            Method::Gd => positive("alpha", self.alpha)?,
            Method::Nag | Method::Hbm => {
                positive("alpha", self.alpha)?;
                if !(0.0..1.0).contains(&self.beta) {
                    return Err(Error::Config(format!("beta must lie in [0, 1), got {}", self.beta)));
                }
            }
            Method::Apc => {
                positive("gamma", self.gamma)?;
                positive("eta_apc", self.eta_apc)?;
            }
            Method::Bfgs => {}
        }
        Ok(())
    }
}

/// Solver-specific server memory.
#[derive(Debug, Clone, PartialEq)]
pub enum Aux {
    None,
    /// Previous iterate of NAG/HBM.
    Momentum {
        prev: DVector<f64>,
    },
    Bfgs {
        /// Inverse-Hessian approximation.
        m: DMatrix<f64>,
        /// `(x, G)` of the previous round.
        prev: Option<(DVector<f64>, DVector<f64>)>,
        /// Rounds whose update was skipped for lack of positive curvature.
        skipped: usize,
    },
    /// Per-agent APC iterates, indexed by agent position.
    Apc {
        locals: Vec<DVector<f64>>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ServerState {
    pub t: usize,
    /// The estimate; for APC this is the server average.
    pub x: DVector<f64>,
    /// IPG pre-conditioner.
    pub k: Option<DMatrix<f64>>,
    pub aux: Aux,
    /// l1 norm of the process noise added to `x` by the last update.
    pub x_noise_l1: f64,
}

impl ServerState {
    /// Non-finite entries anywhere, or an estimate beyond [`DIVERGENCE_NORM`].
    pub fn is_diverged(&self) -> bool {
        let bad_vec = |v: &DVector<f64>| v.iter().any(|e| !e.is_finite());
        let bad_mat = |m: &DMatrix<f64>| m.iter().any(|e| !e.is_finite());
        bad_vec(&self.x)
            || self.x.norm() > DIVERGENCE_NORM
            || self.k.as_ref().is_some_and(bad_mat)
            || match &self.aux {
                Aux::None => false,
                Aux::Momentum { prev } => bad_vec(prev),
                Aux::Bfgs { m, .. } => bad_mat(m),
                Aux::Apc { locals } => locals.iter().any(bad_vec),
            }
    }
}
