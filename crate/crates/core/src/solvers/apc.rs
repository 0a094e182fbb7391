//! Accelerated projection-based consensus.
//!
//! Agent `i` keeps an iterate `x_i` on its own solution set `{x : A_i x = b_i}`
//! and relaxes it toward the server average:
//! `x_i(t+1) = x_i(t) + gamma P_i (x̄(t) - x_i(t))`, where `P_i` projects onto
//! the null space of `A_i`. The server then sets
//! `x̄(t+1) = (eta / m) sum_i x_i(t+1) + (1 - eta) x̄(t)`.
//! Each `x_i(0)` is the minimum-norm solution of the local system and `x̄(0)`
//! is their mean.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::dataset::AgentShard;
use crate::error::{Error, Result};
use crate::network::{LocalProjector, Network};

/// `x_i + gamma P_i (xbar - x_i)`
pub fn apc_local_step(
    projector: &LocalProjector,
    shard: &AgentShard,
    local: &DVector<f64>,
    xbar: &DVector<f64>,
    gamma: f64,
) -> DVector<f64> {
    let pulled = projector.project(shard, &(xbar - local));
    local + pulled * gamma
}

/// Extreme eigenvalues of `X = (1/m) sum_i A_i^T (A_i A_i^T)^+ A_i`, the
/// average of the agents' row-space projectors.
///
/// Near the solution APC is heavy-ball on `X` with step `gamma * eta` and
/// momentum `(1 - gamma)(1 - eta)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ApcSpectrum {
    pub mu_max: f64,
    pub mu_min: f64,
}

impl ApcSpectrum {
    /// Heavy-ball step and momentum implied by `(gamma, eta)`.
    pub fn heavy_ball_equivalent(gamma: f64, eta: f64) -> (f64, f64) {
        (gamma * eta, (1.0 - gamma) * (1.0 - eta))
    }

    /// `(gamma, eta)` whose heavy-ball equivalent is rate-optimal for `X`.
    /// The smaller root is returned as `gamma`.
    pub fn optimal_parameters(&self) -> (f64, f64) {
        let (s1, s0) = (self.mu_max.sqrt(), self.mu_min.sqrt());
        let step = 4.0 / ((s1 + s0) * (s1 + s0));
        let b = (s1 - s0) / (s1 + s0);
        let momentum = b * b;
        // gamma + eta = 1 + step - momentum, gamma * eta = step.
        let sum = 1.0 + step - momentum;
        let disc = (sum * sum - 4.0 * step).max(0.0).sqrt();
        ((sum - disc) / 2.0, (sum + disc) / 2.0)
    }

    /// Spectral radius of the linear APC error recursion for `(gamma, eta)`.
    pub fn rate(&self, gamma: f64, eta: f64) -> f64 {
        let (step, momentum) = Self::heavy_ball_equivalent(gamma, eta);
        [self.mu_max, self.mu_min]
            .into_iter()
            .map(|mu| {
                // Roots of z^2 - (1 + momentum - step mu) z + momentum.
                let p = 1.0 + momentum - step * mu;
                let disc = p * p - 4.0 * momentum;
                if disc >= 0.0 {
                    let r = disc.sqrt();
                    ((p + r) / 2.0).abs().max(((p - r) / 2.0).abs())
                } else {
                    momentum.abs().sqrt()
                }
            })
            .fold(0.0, f64::max)
    }
}

/// Computes [`ApcSpectrum`] from the agents' own projectors.
pub fn apc_projection_spectrum(network: &Network) -> Result<ApcSpectrum> {
    let d = network.dim();
    let m = network.agent_count();
    let x = network.execute_round(
        0,
        |ctx| {
            let shard = ctx.shard();
            let proj = ctx.projector();
            let mut block = DMatrix::zeros(d, d);
            for j in 0..d {
                let mut e = DVector::zeros(d);
                e[j] = 1.0;
                let row_part = &e - proj.project(shard, &e);
                block.set_column(j, &row_part);
            }
            block
        },
        |blocks| crate::network::sum_matrices(d, d, &blocks) / m as f64,
    )?;
    let sym = (&x + x.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym).eigenvalues;
    let mu_max = eig.max();
    let mu_min = eig.min();
    if mu_min.is_nan() || mu_max.is_nan() || mu_min <= 1e-12 * mu_max {
        return Err(Error::RankDeficient {
            lambda_1: mu_max,
            lambda_d: mu_min,
        });
    }
    Ok(ApcSpectrum { mu_max, mu_min })
}
