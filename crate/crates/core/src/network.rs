//! Synchronous server-agent rounds.
//!
//! The [`Network`] owns every agent's shard. Server-side code only ever sees
//! what an agent function returns; the shards themselves are reachable solely
//! through the [`AgentContext`] handed to that function.

use std::sync::OnceLock;

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::dataset::AgentShard;
use crate::error::{Error, Result};

/// Replies that can be checked for non-finite entries.
pub trait Payload {
    fn all_finite(&self) -> bool;
}

impl Payload for f64 {
    fn all_finite(&self) -> bool {
        self.is_finite()
    }
}

impl Payload for DVector<f64> {
    fn all_finite(&self) -> bool {
        self.iter().all(|v| v.is_finite())
    }
}

impl Payload for DMatrix<f64> {
    fn all_finite(&self) -> bool {
        self.iter().all(|v| v.is_finite())
    }
}

impl<A: Payload, B: Payload> Payload for (A, B) {
    fn all_finite(&self) -> bool {
        self.0.all_finite() && self.1.all_finite()
    }
}

impl<T: Payload> Payload for Option<T> {
    fn all_finite(&self) -> bool {
        self.as_ref().is_none_or(Payload::all_finite)
    }
}

/// Projection onto the null space of an agent's `A_i`, plus the minimum-norm
/// solution of its local system. Built on first use and kept at the agent.
#[derive(Debug, Clone)]
pub struct LocalProjector {
    /// Pseudo-inverse of `A_i A_i^T`.
    gram_pinv: DMatrix<f64>,
}

impl LocalProjector {
    fn new(shard: &AgentShard) -> Self {
        let a = shard.a();
        let gram = a * a.transpose();
        let eig = SymmetricEigen::new(gram);
        let top = eig.eigenvalues.amax();
        let tol = top * 1e-12 * eig.eigenvalues.len().max(1) as f64;
        let inv = eig.eigenvalues.map(|l| if l > tol { 1.0 / l } else { 0.0 });
        let gram_pinv = &eig.eigenvectors * DMatrix::from_diagonal(&inv) * eig.eigenvectors.transpose();
        Self { gram_pinv }
    }

    /// `v - A_i^T (A_i A_i^T)^+ A_i v`
    pub fn project(&self, shard: &AgentShard, v: &DVector<f64>) -> DVector<f64> {
        let av = shard.sparse().mul_vec(v);
        let coeff = &self.gram_pinv * av;
        v - shard.sparse().tr_mul_vec(&coeff)
    }

    /// `A_i^T (A_i A_i^T)^+ b_i` for the outputs the agent observes.
    pub fn min_norm_solution(&self, shard: &AgentShard) -> DVector<f64> {
        let coeff = &self.gram_pinv * shard.observed_b();
        shard.sparse().tr_mul_vec(&coeff)
    }
}

#[derive(Debug)]
struct Agent {
    shard: AgentShard,
    projector: OnceLock<LocalProjector>,
}

/// What an agent function may touch: its own shard and its own cached state.
pub struct AgentContext<'a> {
    agent: &'a Agent,
    index: usize,
    agents: usize,
    t: usize,
}

impl AgentContext<'_> {
    pub fn shard(&self) -> &AgentShard {
        &self.agent.shard
    }

    pub fn agent_id(&self) -> usize {
        self.agent.shard.agent_id()
    }

    /// Position of this agent in id order, starting at 0.
    pub fn agent_index(&self) -> usize {
        self.index
    }

    /// Number of agents `m` in the network.
    pub fn agent_count(&self) -> usize {
        self.agents
    }

    /// Current round index.
    pub fn round(&self) -> usize {
        self.t
    }

    pub fn projector(&self) -> &LocalProjector {
        self.agent
            .projector
            .get_or_init(|| LocalProjector::new(&self.agent.shard))
    }
}

#[derive(Debug)]
pub struct Network {
    agents: Vec<Agent>,
    dim: usize,
}

impl Network {
    /// Agents are ordered by id whatever order the shards arrive in.
    pub fn new(mut shards: Vec<AgentShard>) -> Result<Self> {
        let dim = shards
            .first()
            .map(AgentShard::dim)
            .ok_or_else(|| Error::Config("a network needs at least one agent".into()))?;
        if shards.iter().any(|s| s.dim() != dim) {
            return Err(Error::Dimension("agents disagree on d".into()));
        }
        shards.sort_by_key(AgentShard::agent_id);
        if shards.windows(2).any(|w| w[0].agent_id() == w[1].agent_id()) {
            return Err(Error::Config("duplicate agent id".into()));
        }
        Ok(Self {
            agents: shards
                .into_iter()
                .map(|shard| Agent {
                    shard,
                    projector: OnceLock::new(),
                })
                .collect(),
            dim,
        })
    }

    pub fn agent_count(&self) -> usize {
        self.agents.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Total number of rows across agents.
    pub fn rows(&self) -> usize {
        self.agents.iter().map(|a| a.shard.n_rows()).sum()
    }

    /// Runs one synchronous round: every agent evaluates `agent_fn` once, then
    /// `aggregate` receives the replies in agent-id order.
    ///
    /// A reply containing a non-finite value aborts the round with
    /// [`Error::Diverged`].
    pub fn execute_round<R, S, F, G>(&self, t: usize, agent_fn: F, aggregate: G) -> Result<S>
    where
        R: Payload + Send,
        F: Fn(&AgentContext<'_>) -> R + Sync,
        G: FnOnce(Vec<R>) -> S,
    {
        let m = self.agents.len();
        let call = |(index, agent): (usize, &Agent)| {
            agent_fn(&AgentContext {
                agent,
                index,
                agents: m,
                t,
            })
        };
        #[cfg(feature = "parallel")]
        let replies: Vec<R> = {
            use rayon::prelude::*;
            self.agents.par_iter().enumerate().map(call).collect()
        };
        #[cfg(not(feature = "parallel"))]
        let replies: Vec<R> = self.agents.iter().enumerate().map(call).collect();

        if replies.iter().any(|r| !r.all_finite()) {
            return Err(Error::Diverged { t });
        }
        Ok(aggregate(replies))
    }
}

/// Sequential sum in the order given.
pub fn sum_vectors<'a, I>(dim: usize, parts: I) -> DVector<f64>
where
    I: IntoIterator<Item = &'a DVector<f64>>,
{
    parts.into_iter().fold(DVector::zeros(dim), |mut acc, v| {
        acc += v;
        acc
    })
}

/// Sequential sum in the order given.
pub fn sum_matrices<'a, I>(rows: usize, cols: usize, parts: I) -> DMatrix<f64>
where
    I: IntoIterator<Item = &'a DMatrix<f64>>,
{
    parts.into_iter().fold(DMatrix::zeros(rows, cols), |mut acc, v| {
        acc += v;
        acc
    })
}
