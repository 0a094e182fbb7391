//! Collective regression data, its row partition across agents and the
//! spectral quantities of `A^T A` that every bound depends on.

mod builtin;
mod mtx;
mod sparse;

use nalgebra::{DMatrix, DVector, SymmetricEigen};

pub use builtin::{ash608_surrogate, gr_30_30, synthetic_matrix, DatasetSource, SyntheticSpec};
pub use mtx::{parse_matrix_market, parse_matrix_market_str, to_matrix_market_string};
pub use sparse::SparseRows;

use crate::error::{Error, Result};

/// `lambda_d > RANK_TOL * lambda_1` is required for `A^T A` to count as full rank.
pub const RANK_TOL: f64 = 1e-12;

/// The collective system `(A, b)` and its unique least-squares solution.
#[derive(Debug, Clone, PartialEq)]
pub struct CollectiveData {
    name: String,
    a: DMatrix<f64>,
    b: DVector<f64>,
    x_star: DVector<f64>,
}

impl CollectiveData {
    /// Builds `b = A x_star`, so `x_star` is an exact solution.
    pub fn from_solution(name: impl Into<String>, a: DMatrix<f64>, x_star: DVector<f64>) -> Result<Self> {
        let b = synthesize_output(&a, &x_star)?;
        Self::check_shape(&a)?;
        Ok(Self {
            name: name.into(),
            a,
            b,
            x_star,
        })
    }

    /// Uses the given outputs and solves the normal equations for `x_star`.
    pub fn from_outputs(name: impl Into<String>, a: DMatrix<f64>, b: DVector<f64>) -> Result<Self> {
        Self::check_shape(&a)?;
        if b.len() != a.nrows() {
            return Err(Error::Dimension(format!(
                "output vector has length {} but A has {} rows",
                b.len(),
                a.nrows()
            )));
        }
        let gram = a.tr_mul(&a);
        let rhs = a.tr_mul(&b);
        let x_star = gram.cholesky().map(|c| c.solve(&rhs)).ok_or_else(|| rank_error(&a))?;
        Ok(Self {
            name: name.into(),
            a,
            b,
            x_star,
        })
    }

    /// The standard protocol: `x_star` is the all-ones vector.
    pub fn with_unit_solution(name: impl Into<String>, a: DMatrix<f64>) -> Result<Self> {
        let x_star = DVector::from_element(a.ncols(), 1.0);
        Self::from_solution(name, a, x_star)
    }

    fn check_shape(a: &DMatrix<f64>) -> Result<()> {
        if a.ncols() == 0 || a.nrows() < a.ncols() {
            return Err(Error::Dimension(format!(
                "A is {} x {}; need N >= d >= 1",
                a.nrows(),
                a.ncols()
            )));
        }
        Ok(())
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn b(&self) -> &DVector<f64> {
        &self.b
    }

    pub fn x_star(&self) -> &DVector<f64> {
        &self.x_star
    }

    /// Number of rows `N`.
    pub fn rows(&self) -> usize {
        self.a.nrows()
    }

    /// Number of unknowns `d`.
    pub fn dim(&self) -> usize {
        self.a.ncols()
    }
}

fn rank_error(a: &DMatrix<f64>) -> Error {
    let eig = a.tr_mul(a).symmetric_eigenvalues();
    Error::RankDeficient {
        lambda_1: eig.max(),
        lambda_d: eig.min(),
    }
}

/// `b = A x_star`.
pub fn synthesize_output(a: &DMatrix<f64>, x_star: &DVector<f64>) -> Result<DVector<f64>> {
    if a.ncols() != x_star.len() {
        return Err(Error::Dimension(format!(
            "A has {} columns but x_star has length {}",
            a.ncols(),
            x_star.len()
        )));
    }
    Ok(a * x_star)
}

/// One agent's private rows of the collective system.
#[derive(Debug, Clone)]
pub struct AgentShard {
    agent_id: usize,
    row_offset: usize,
    a: DMatrix<f64>,
    b: DVector<f64>,
    b_obs: Option<DVector<f64>>,
    sparse: SparseRows,
}

impl AgentShard {
    pub fn new(agent_id: usize, row_offset: usize, a: DMatrix<f64>, b: DVector<f64>) -> Result<Self> {
        if a.nrows() != b.len() {
            return Err(Error::Dimension(format!(
                "shard {agent_id}: {} rows but {} outputs",
                a.nrows(),
                b.len()
            )));
        }
        let sparse = SparseRows::from_dense(&a);
        Ok(Self {
            agent_id,
            row_offset,
            a,
            b,
            b_obs: None,
            sparse,
        })
    }

    /// 1-based agent id.
    pub fn agent_id(&self) -> usize {
        self.agent_id
    }

    /// Index of this shard's first row in the collective system.
    pub fn row_offset(&self) -> usize {
        self.row_offset
    }

    pub fn n_rows(&self) -> usize {
        self.a.nrows()
    }

    pub fn dim(&self) -> usize {
        self.a.ncols()
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn b(&self) -> &DVector<f64> {
        &self.b
    }

    /// The corrupted outputs, when observation noise has been applied.
    pub fn b_obs(&self) -> Option<&DVector<f64>> {
        self.b_obs.as_ref()
    }

    /// The outputs the agent actually sees.
    pub fn observed_b(&self) -> &DVector<f64> {
        self.b_obs.as_ref().unwrap_or(&self.b)
    }

    pub fn sparse(&self) -> &SparseRows {
        &self.sparse
    }

    pub fn set_observed(&mut self, b_obs: DVector<f64>) -> Result<()> {
        if b_obs.len() != self.b.len() {
            return Err(Error::Dimension(format!(
                "shard {}: corrupted output has length {}, expected {}",
                self.agent_id,
                b_obs.len(),
                self.b.len()
            )));
        }
        self.b_obs = Some(b_obs);
        Ok(())
    }
}

/// Splits the rows into `m` contiguous blocks of `N / m` rows, the first
/// `N mod m` agents taking one extra row.
pub fn partition(data: &CollectiveData, m: usize) -> Result<Vec<AgentShard>> {
    let n = data.rows();
    if m == 0 || m > n {
        return Err(Error::AgentCount { agents: m, rows: n });
    }
    let base = n / m;
    let extra = n % m;
    let mut offset = 0;
    (0..m)
        .map(|i| {
            let len = base + usize::from(i < extra);
            let a = data.a.rows(offset, len).into_owned();
            let b = data.b.rows(offset, len).into_owned();
            let shard = AgentShard::new(i + 1, offset, a, b);
            offset += len;
            shard
        })
        .collect()
}

/// Stacks shards back into `(A, b)` in agent order.
pub fn concatenate(shards: &[AgentShard]) -> Result<(DMatrix<f64>, DVector<f64>)> {
    let d = shards
        .first()
        .map(AgentShard::dim)
        .ok_or_else(|| Error::Dimension("no shards".into()))?;
    if shards.iter().any(|s| s.dim() != d) {
        return Err(Error::Dimension("shards disagree on d".into()));
    }
    let n: usize = shards.iter().map(AgentShard::n_rows).sum();
    let mut a = DMatrix::zeros(n, d);
    let mut b = DVector::zeros(n);
    let mut offset = 0;
    for s in shards {
        a.rows_mut(offset, s.n_rows()).copy_from(&s.a);
        b.rows_mut(offset, s.n_rows()).copy_from(&s.b);
        offset += s.n_rows();
    }
    Ok((a, b))
}

/// Extreme eigenpairs of `A^T A` and its inverse `K*`.
#[derive(Debug, Clone)]
pub struct Spectrum {
    pub lambda_1: f64,
    pub lambda_d: f64,
    /// `(lambda_1 - lambda_d) / (lambda_1 + lambda_d)`
    pub varrho: f64,
    pub v_1: DVector<f64>,
    pub v_d: DVector<f64>,
    pub gram: DMatrix<f64>,
    pub k_star: DMatrix<f64>,
}

impl Spectrum {
    pub fn condition_number(&self) -> f64 {
        self.lambda_1 / self.lambda_d
    }

    /// The Richardson rate `max(|1 - alpha lambda_1|, |1 - alpha lambda_d|)` of
    /// the pre-conditioner columns.
    pub fn richardson_rate(&self, alpha: f64) -> f64 {
        (1.0 - alpha * self.lambda_1)
            .abs()
            .max((1.0 - alpha * self.lambda_d).abs())
    }

    /// `||I - step A^T A||_2`
    pub fn gradient_contraction(&self, step: f64) -> f64 {
        self.richardson_rate(step)
    }
}

pub fn compute_spectrum(data: &CollectiveData) -> Result<Spectrum> {
    let gram = data.a.tr_mul(&data.a);
    let eig = SymmetricEigen::new(gram.clone());
    let (mut i_max, mut i_min) = (0, 0);
    for (i, &l) in eig.eigenvalues.iter().enumerate() {
        if l > eig.eigenvalues[i_max] {
            i_max = i;
        }
        if l < eig.eigenvalues[i_min] {
            i_min = i;
        }
    }
    let lambda_1 = eig.eigenvalues[i_max];
    let lambda_d = eig.eigenvalues[i_min];
    if lambda_d.is_nan() || lambda_1.is_nan() || lambda_d <= RANK_TOL * lambda_1 {
        return Err(Error::RankDeficient { lambda_1, lambda_d });
    }
    let k_star = gram
        .clone()
        .cholesky()
        .map(|c| c.solve(&DMatrix::identity(gram.nrows(), gram.ncols())))
        .ok_or(Error::RankDeficient { lambda_1, lambda_d })?;
    Ok(Spectrum {
        lambda_1,
        lambda_d,
        varrho: (lambda_1 - lambda_d) / (lambda_1 + lambda_d),
        v_1: eig.eigenvectors.column(i_max).into_owned(),
        v_d: eig.eigenvectors.column(i_min).into_owned(),
        gram,
        k_star,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn toy(rows: usize, cols: usize) -> CollectiveData {
        let a = DMatrix::from_fn(rows, cols, |i, j| {
            ((i * 7 + j * 3) % 5) as f64 - 2.0 + if i == j { 4.0 } else { 0.0 }
        });
        CollectiveData::with_unit_solution("toy", a).unwrap()
    }

    #[test]
    fn synthesize_small_cases() {
        let b = synthesize_output(&DMatrix::identity(3, 3), &DVector::from_element(3, 1.0)).unwrap();
        assert_eq!(b, DVector::from_element(3, 1.0));
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let b = synthesize_output(&a, &DVector::from_element(2, 1.0)).unwrap();
        assert_eq!(b.as_slice(), &[3.0, 7.0]);
        assert!(matches!(
            synthesize_output(&a, &DVector::zeros(3)),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn synthesized_residual_is_zero() {
        let data = toy(12, 4);
        assert_eq!(data.a() * data.x_star() - data.b(), DVector::zeros(12));
    }

    #[test]
    fn partition_sizes() {
        let data = toy(10, 3);
        let shards = partition(&data, 10).unwrap();
        assert!(shards.iter().all(|s| s.n_rows() == 1));

        let a = DMatrix::from_fn(608, 2, |i, j| (i + j) as f64 + if j == 0 { 1.0 } else { 0.0 });
        let big = CollectiveData::with_unit_solution("n608", a).unwrap();
        let sizes: Vec<usize> = partition(&big, 10).unwrap().iter().map(|s| s.n_rows()).collect();
        assert_eq!(sizes, vec![61, 61, 61, 61, 61, 61, 61, 61, 60, 60]);
    }

    #[test]
    fn partition_rejects_bad_counts() {
        let data = toy(5, 2);
        assert!(matches!(partition(&data, 0), Err(Error::AgentCount { .. })));
        assert!(matches!(partition(&data, 6), Err(Error::AgentCount { .. })));
    }

    #[test]
    fn spectrum_of_diagonal() {
        let data =
            CollectiveData::with_unit_solution("diag", DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 1.0])))
                .unwrap();
        let s = compute_spectrum(&data).unwrap();
        assert_relative_eq!(s.lambda_1, 4.0, epsilon = 1e-14);
        assert_relative_eq!(s.lambda_d, 1.0, epsilon = 1e-14);
        assert_relative_eq!(s.varrho, 0.6, epsilon = 1e-14);
        assert_relative_eq!(
            s.k_star,
            DMatrix::from_diagonal(&DVector::from_vec(vec![0.25, 1.0])),
            epsilon = 1e-14
        );
    }

    #[test]
    fn spectrum_of_orthogonal_is_flat() {
        let (c, s) = (0.6f64, 0.8f64);
        let q = DMatrix::from_row_slice(2, 2, &[c, -s, s, c]);
        let sp = compute_spectrum(&CollectiveData::with_unit_solution("rot", q).unwrap()).unwrap();
        assert_relative_eq!(sp.lambda_1, 1.0, epsilon = 1e-12);
        assert_relative_eq!(sp.lambda_d, 1.0, epsilon = 1e-12);
        assert!(sp.varrho.abs() < 1e-12);
    }

    #[test]
    fn rank_deficiency_is_reported() {
        let a = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 2.0, 4.0, 3.0, 6.0]);
        let data = CollectiveData::with_unit_solution("rank1", a).unwrap();
        assert!(matches!(compute_spectrum(&data), Err(Error::RankDeficient { .. })));
        assert!(matches!(
            CollectiveData::with_unit_solution("wide", DMatrix::zeros(2, 3)),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn least_squares_solution_from_outputs() {
        let a = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, 1.0, 1.0]);
        let b = DVector::from_vec(vec![1.0, 1.0, 3.0]);
        let data = CollectiveData::from_outputs("ls", a.clone(), b.clone()).unwrap();
        let grad = a.transpose() * (&a * data.x_star() - &b);
        assert!(grad.norm() < 1e-12);
    }

    proptest! {
        #[test]
        fn shards_reassemble_exactly(rows in 3usize..40, cols in 1usize..4, m_frac in 0.0f64..1.0) {
            prop_assume!(rows >= cols);
            let data = toy(rows, cols);
            let m = 1 + ((rows - 1) as f64 * m_frac) as usize;
            let shards = partition(&data, m).unwrap();
            prop_assert_eq!(shards.len(), m);
            prop_assert_eq!(shards.iter().map(AgentShard::n_rows).sum::<usize>(), rows);
            let (a, b) = concatenate(&shards).unwrap();
            prop_assert_eq!(&a, data.a());
            prop_assert_eq!(&b, data.b());
            for w in shards.windows(2) {
                prop_assert!(w[0].n_rows() >= w[1].n_rows());
                prop_assert_eq!(w[0].row_offset() + w[0].n_rows(), w[1].row_offset());
            }
        }
    }
}
