use nalgebra::{DMatrix, DVector};

/// Compressed-row copy of a dense block, used for the agent-side products.
///
/// The benchmark matrices have a handful of nonzeros per row, so the
/// `A v` and `A^T r` kernels below are far cheaper than their dense forms.
/// Results agree with the dense products up to summation order.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseRows {
    nrows: usize,
    ncols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    vals: Vec<f64>,
    /// Sorted columns holding at least one nonzero.
    support: Vec<usize>,
    /// Position of each stored entry's column within `support`.
    col_local: Vec<usize>,
    local_of: Vec<Option<usize>>,
}

impl SparseRows {
    pub fn from_dense(m: &DMatrix<f64>) -> Self {
        let mut row_ptr = Vec::with_capacity(m.nrows() + 1);
        let mut col_idx = Vec::new();
        let mut vals = Vec::new();
        row_ptr.push(0);
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                let v = m[(i, j)];
                if v != 0.0 {
                    col_idx.push(j);
                    vals.push(v);
                }
            }
            row_ptr.push(vals.len());
        }
        let mut local_of = vec![None; m.ncols()];
        for &j in &col_idx {
            local_of[j] = Some(0);
        }
        let mut support = Vec::new();
        for (j, slot) in local_of.iter_mut().enumerate() {
            if slot.is_some() {
                *slot = Some(support.len());
                support.push(j);
            }
        }
        let col_local = col_idx.iter().map(|&j| local_of[j].unwrap_or(0)).collect();
        Self {
            nrows: m.nrows(),
            ncols: m.ncols(),
            row_ptr,
            col_idx,
            vals,
            support,
            col_local,
            local_of,
        }
    }

    /// Columns with at least one nonzero, in increasing order.
    pub fn support(&self) -> &[usize] {
        &self.support
    }

    /// Index of column `j` within [`support`](Self::support).
    pub fn local_index(&self, j: usize) -> Option<usize> {
        self.local_of.get(j).copied().flatten()
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.row_ptr[i]..self.row_ptr[i + 1];
        self.col_idx[span.clone()]
            .iter()
            .copied()
            .zip(self.vals[span].iter().copied())
    }

    /// `out = A v`
    pub fn mul_vec_into(&self, v: &[f64], out: &mut [f64]) {
        debug_assert_eq!(v.len(), self.ncols);
        debug_assert_eq!(out.len(), self.nrows);
        for (i, o) in out.iter_mut().enumerate() {
            *o = self.row(i).map(|(j, a)| a * v[j]).sum();
        }
    }

    /// `out += A^T r`
    pub fn tr_mul_acc(&self, r: &[f64], out: &mut [f64]) {
        debug_assert_eq!(r.len(), self.nrows);
        debug_assert_eq!(out.len(), self.ncols);
        for (i, &ri) in r.iter().enumerate() {
            if ri == 0.0 {
                continue;
            }
            for (j, a) in self.row(i) {
                out[j] += a * ri;
            }
        }
    }

    /// `out += (A^T r)` restricted to the support columns, indexed locally.
    /// Summation order matches [`tr_mul_acc`](Self::tr_mul_acc).
    pub fn tr_mul_acc_support(&self, r: &[f64], out: &mut [f64]) {
        debug_assert_eq!(r.len(), self.nrows);
        debug_assert_eq!(out.len(), self.support.len());
        for (i, &ri) in r.iter().enumerate() {
            if ri == 0.0 {
                continue;
            }
            let span = self.row_ptr[i]..self.row_ptr[i + 1];
            for (&l, &a) in self.col_local[span.clone()].iter().zip(&self.vals[span]) {
                out[l] += a * ri;
            }
        }
    }

    pub fn mul_vec(&self, v: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(self.nrows);
        self.mul_vec_into(v.as_slice(), out.as_mut_slice());
        out
    }

    pub fn tr_mul_vec(&self, r: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(self.ncols);
        self.tr_mul_acc(r.as_slice(), out.as_mut_slice());
        out
    }
}
