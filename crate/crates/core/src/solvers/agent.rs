//! Computations an agent performs on its own shard.

use nalgebra::{DMatrix, DVector};

use crate::dataset::AgentShard;
use crate::error::{Error, Result};
use crate::network::Payload;

fn check_dim(shard: &AgentShard, len: usize, what: &str) -> Result<()> {
    if len != shard.dim() {
        return Err(Error::Dimension(format!(
            "agent {}: {what} has length {len}, expected {}",
            shard.agent_id(),
            shard.dim()
        )));
    }
    Ok(())
}

/// `(A_i)^T (A_i x - b_i)`, using the corrupted outputs when the shard has them.
pub fn agent_gradient(shard: &AgentShard, x: &DVector<f64>) -> Result<DVector<f64>> {
    check_dim(shard, x.len(), "x")?;
    let a = shard.sparse();
    let mut resid = a.mul_vec(x);
    resid -= shard.observed_b();
    Ok(a.tr_mul_vec(&resid))
}

/// An agent's `R` reply in compressed form.
///
/// Only rows of `R` indexed by the shard's nonzero columns can differ from
/// `-I / m`, so those rows are sent densely and the rest is implied by `diag`.
#[derive(Debug, Clone, PartialEq)]
pub struct RBlock {
    support: Vec<usize>,
    rows: DMatrix<f64>,
    diag: f64,
}

impl RBlock {
    /// A reply that fails the finiteness check, for agents that could not compute.
    pub fn poisoned(d: usize) -> Self {
        Self {
            support: Vec::new(),
            rows: DMatrix::zeros(0, d),
            diag: f64::NAN,
        }
    }

    pub fn dim(&self) -> usize {
        self.rows.ncols()
    }

    /// `acc += R`, entry by entry.
    pub fn add_to(&self, acc: &mut DMatrix<f64>) {
        let d = self.dim();
        for (j, col) in self.rows.column_iter().enumerate() {
            let mut acc_col = acc.column_mut(j);
            for (&s, v) in self.support.iter().zip(col.iter()) {
                acc_col[s] += v;
            }
        }
        let mut next = self.support.iter().peekable();
        for r in 0..d {
            if next.peek() == Some(&&r) {
                next.next();
            } else {
                acc[(r, r)] += self.diag;
            }
        }
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(self.dim(), self.dim());
        self.add_to(&mut out);
        out
    }
}

impl Payload for RBlock {
    fn all_finite(&self) -> bool {
        self.diag.is_finite() && self.rows.all_finite()
    }
}

/// Sums replies in the order given, starting from zero.
pub fn sum_r_blocks<'a, I>(d: usize, parts: I) -> DMatrix<f64>
where
    I: IntoIterator<Item = &'a RBlock>,
{
    let mut acc = DMatrix::zeros(d, d);
    for p in parts {
        p.add_to(&mut acc);
    }
    acc
}

/// The `d` vectors `R_j = (A_i)^T A_i k_j - e_j / m` in compressed form.
pub fn agent_r_block(shard: &AgentShard, k: &DMatrix<f64>, m: usize) -> Result<RBlock> {
    let d = shard.dim();
    if k.shape() != (d, d) {
        return Err(Error::Dimension(format!(
            "agent {}: pre-conditioner is {:?}, expected {d} x {d}",
            shard.agent_id(),
            k.shape()
        )));
    }
    if m == 0 {
        return Err(Error::Config("agent count must be positive".into()));
    }
    let a = shard.sparse();
    let inv_m = 1.0 / m as f64;
    let support = a.support().to_vec();
    let mut rows = DMatrix::zeros(support.len(), d);
    let mut tmp = vec![0.0; a.nrows()];
    for (j, (kj, mut rj)) in k.column_iter().zip(rows.column_iter_mut()).enumerate() {
        a.mul_vec_into(kj.as_slice(), &mut tmp);
        a.tr_mul_acc_support(&tmp, rj.as_mut_slice());
        if let Some(l) = a.local_index(j) {
            rj[l] -= inv_m;
        }
    }
    Ok(RBlock {
        support,
        rows,
        diag: -inv_m,
    })
}

/// The `d` vectors `R_j = (A_i)^T A_i k_j - e_j / m`, returned as the columns
/// of a `d x d` matrix.
pub fn agent_r_vectors(shard: &AgentShard, k: &DMatrix<f64>, m: usize) -> Result<DMatrix<f64>> {
    agent_r_block(shard, k, m).map(|b| b.to_dense())
}
