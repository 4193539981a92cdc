//! Sparse matrix wrapper and the operator abstraction used by the solvers.

use std::io::Write;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use nalgebra_sparse::{CooMatrix, CsrMatrix};

use crate::error::{Error, Result};

/// A linear map `x ↦ y` of fixed dimension.
pub trait LinearOperator {
    fn dim(&self) -> usize;

    /// Writes the product into `y`, which has length [`dim`](Self::dim).
    fn apply_into(&self, x: &DVector<f64>, y: &mut DVector<f64>);

    fn apply_to(&self, x: &DVector<f64>) -> DVector<f64> {
        let mut y = DVector::zeros(self.dim());
        self.apply_into(x, &mut y);
        y
    }
}

#[derive(Clone, Copy, Debug)]
pub struct Identity(pub usize);

impl LinearOperator for Identity {
    fn dim(&self) -> usize {
        self.0
    }

    fn apply_into(&self, x: &DVector<f64>, y: &mut DVector<f64>) {
        y.copy_from(x);
    }
}

/// Compressed sparse row matrix. Symmetric matrices store both triangles.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseMatrix(CsrMatrix<f64>);

impl SparseMatrix {
    /// Builds from coordinate entries; duplicates are summed.
    pub fn from_triplets(
        nrows: usize,
        ncols: usize,
        entries: impl IntoIterator<Item = (usize, usize, f64)>,
    ) -> Self {
        let mut coo = CooMatrix::new(nrows, ncols);
        for (i, j, v) in entries {
            coo.push(i, j, v);
        }
        Self(CsrMatrix::from(&coo))
    }

    pub fn zeros(nrows: usize, ncols: usize) -> Self {
        Self(CsrMatrix::zeros(nrows, ncols))
    }

    pub fn from_csr(csr: CsrMatrix<f64>) -> Self {
        Self(csr)
    }

    pub fn csr(&self) -> &CsrMatrix<f64> {
        &self.0
    }

    pub fn nrows(&self) -> usize {
        self.0.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.0.ncols()
    }

    pub fn nnz(&self) -> usize {
        self.0.nnz()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let row = self.0.row(i);
        match row.col_indices().binary_search(&j) {
            Ok(k) => row.values()[k],
            Err(_) => 0.0,
        }
    }

    pub fn triplets(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        self.0.triplet_iter().map(|(i, j, v)| (i, j, *v))
    }

    pub fn mul_vec(&self, x: &DVector<f64>) -> DVector<f64> {
        let mut y = DVector::zeros(self.nrows());
        self.mul_vec_into(x, &mut y);
        y
    }

    pub fn mul_vec_into(&self, x: &DVector<f64>, y: &mut DVector<f64>) {
        assert_eq!(x.len(), self.ncols());
        for (i, row) in self.0.row_iter().enumerate() {
            y[i] = row
                .col_indices()
                .iter()
                .zip(row.values())
                .map(|(&j, v)| v * x[j])
                .sum();
        }
    }

    /// `selfᵀ x` without forming the transpose.
    pub fn tr_mul_vec(&self, x: &DVector<f64>) -> DVector<f64> {
        assert_eq!(x.len(), self.nrows());
        let mut y = DVector::zeros(self.ncols());
        for (i, row) in self.0.row_iter().enumerate() {
            let xi = x[i];
            if xi != 0.0 {
                for (&j, v) in row.col_indices().iter().zip(row.values()) {
                    y[j] += v * xi;
                }
            }
        }
        y
    }

    pub fn transpose(&self) -> Self {
        Self(self.0.transpose())
    }

    pub fn matmul(&self, other: &SparseMatrix) -> Self {
        Self(&self.0 * &other.0)
    }

    /// `self * dense`.
    pub fn mul_dense(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        assert_eq!(b.nrows(), self.ncols());
        let mut out = DMatrix::zeros(self.nrows(), b.ncols());
        for (i, row) in self.0.row_iter().enumerate() {
            for (&j, v) in row.col_indices().iter().zip(row.values()) {
                for c in 0..b.ncols() {
                    out[(i, c)] += v * b[(j, c)];
                }
            }
        }
        out
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut d = DMatrix::zeros(self.nrows(), self.ncols());
        for (i, j, v) in self.triplets() {
            d[(i, j)] += v;
        }
        d
    }

    /// Rows `rows` and columns `cols`, in the given orders.
    pub fn submatrix(&self, rows: &[usize], cols: &[usize]) -> Self {
        let mut col_map = vec![usize::MAX; self.ncols()];
        for (k, &c) in cols.iter().enumerate() {
            col_map[c] = k;
        }
        let entries = rows.iter().enumerate().flat_map(|(new_i, &i)| {
            let row = self.0.row(i);
            row.col_indices()
                .iter()
                .zip(row.values())
                .filter(|(j, _)| col_map[**j] != usize::MAX)
                .map(|(j, v)| (new_i, col_map[*j], *v))
                .collect::<Vec<_>>()
        });
        Self::from_triplets(rows.len(), cols.len(), entries)
    }

    pub fn dense_submatrix(&self, rows: &[usize], cols: &[usize]) -> DMatrix<f64> {
        self.submatrix(rows, cols).to_dense()
    }

    /// Largest `|a_ij - a_ji|`.
    pub fn symmetry_defect(&self) -> f64 {
        self.triplets()
            .map(|(i, j, v)| (v - self.get(j, i)).abs())
            .fold(0.0, f64::max)
    }

    /// One `row col value` line per stored entry, zero-based indices.
    pub fn write_coordinate<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "% {} {} {}", self.nrows(), self.ncols(), self.nnz())?;
        for (i, j, v) in self.triplets() {
            writeln!(w, "{i} {j} {v:.17e}")?;
        }
        Ok(())
    }
}

impl LinearOperator for SparseMatrix {
    fn dim(&self) -> usize {
        self.nrows()
    }

    fn apply_into(&self, x: &DVector<f64>, y: &mut DVector<f64>) {
        self.mul_vec_into(x, y);
    }
}

/// Dense Cholesky factorization with a labelled failure.
pub fn cholesky(m: DMatrix<f64>, what: &str) -> Result<Cholesky<f64, Dyn>> {
    Cholesky::new(m).ok_or_else(|| Error::NotPositiveDefinite(what.to_string()))
}

/// Dense matrix of an operator, one column per unit vector.
pub fn operator_to_dense(op: &impl LinearOperator) -> DMatrix<f64> {
    let n = op.dim();
    let mut out = DMatrix::zeros(n, n);
    let mut e = DVector::zeros(n);
    let mut y = DVector::zeros(n);
    for j in 0..n {
        e[j] = 1.0;
        op.apply_into(&e, &mut y);
        out.set_column(j, &y);
        e[j] = 0.0;
    }
    out
}
