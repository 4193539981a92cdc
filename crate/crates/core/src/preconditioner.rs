//! Enriched additive average Schwarz preconditioner.
//!
//! `B_E v = P_c A_c⁻¹ P_cᵀ v + Σ_i R_iᵀ A_i⁻¹ R_i v`, applied either directly
//! (reference mode) or through the block inverse of the coarse matrix split
//! into averaging and eigenvector parts (blockwise mode).

use std::ops::Range;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::assembly::BlockMatrices;
use crate::coarse_space::{eigen_columns, AverageOperator, EnrichedCoarseBasis, LocalEigenBasis};
use crate::error::{Error, Result};
use crate::linalg::{cholesky, LinearOperator, SparseMatrix};
use crate::mortar::FreeDofMap;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ApplicationMode {
    #[default]
    Reference,
    Blockwise,
}

/// Operands of the block form of the coarse solve.
///
/// With `W` the selected eigenvectors of all subdomains stacked block-diagonally
/// and `R_r` the restriction to interior dofs, the coarse matrix is
/// `[[R_0 A R_0ᵀ, G], [Gᵀ, D]]` with `G = R_0 A R_rᵀ Wᵀ` and `D = diag(λ)`.
#[derive(Clone, Debug)]
pub struct BlockOperands {
    pub r0: SparseMatrix,
    pub g: DMatrix<f64>,
    pub d: DVector<f64>,
    /// `R_0 A R_0ᵀ − G D⁻¹ Gᵀ`.
    pub schur: DMatrix<f64>,
    schur_chol: Option<Cholesky<f64, Dyn>>,
    /// `Wᵀ` blocks: selected eigenvectors of each subdomain.
    pub w: Vec<DMatrix<f64>>,
    pub interior_ranges: Vec<Range<usize>>,
    /// Offsets of each subdomain's eigen coordinates.
    pub eigen_ranges: Vec<Range<usize>>,
    n_free: usize,
}

impl BlockOperands {
    pub fn build(
        a_free: &SparseMatrix,
        blocks: &BlockMatrices,
        dofs: &FreeDofMap,
        avg: &AverageOperator,
        bases: &[LocalEigenBasis],
    ) -> Result<Self> {
        let r0 = avg.restriction();
        let (eig, eigen_ranges) = eigen_columns(dofs, bases)?;
        let d = DVector::from_iterator(
            eig.ncols(),
            bases.iter().flat_map(|b| b.selected_values().to_vec()),
        );
        if let Some(bad) = d.iter().find(|&&l| !(l > 0.0)) {
            return Err(Error::NotPositiveDefinite(format!(
                "eigenvalue block D has entry {bad}"
            )));
        }
        // A_N^(12) Wᵀ: the interior columns of A times the stacked eigenvectors
        let interior_start = dofs.interior_range().start;
        let wt = SparseMatrix::from_triplets(
            dofs.n_interior,
            eig.ncols(),
            eig.triplets().map(|(i, j, v)| (i - interior_start, j, v)),
        );
        let g = r0.mul_dense(&blocks.a12.matmul(&wt).to_dense());
        let a0 = r0.matmul(&a_free.matmul(&avg.prolongation)).to_dense();
        let mut gd = g.clone();
        for (j, mut col) in gd.column_iter_mut().enumerate() {
            col /= d[j];
        }
        let schur = a0 - &gd * g.transpose();
        let schur = (&schur + schur.transpose()) * 0.5;
        let schur_chol = if schur.nrows() == 0 {
            None
        } else {
            Some(cholesky(schur.clone(), "Schur complement of the coarse matrix")?)
        };
        Ok(Self {
            r0,
            g,
            d,
            schur,
            schur_chol,
            w: bases.iter().map(|b| b.selected_vectors()).collect(),
            interior_ranges: dofs.interior_ranges.clone(),
            eigen_ranges,
            n_free: a_free.nrows(),
        })
    }

    fn n_eigen(&self) -> usize {
        self.d.len()
    }

    fn solve_schur(&self, x: &DVector<f64>) -> DVector<f64> {
        match &self.schur_chol {
            Some(c) => c.solve(x),
            None => x.clone(),
        }
    }

    /// `W R_r v`.
    fn w_restrict(&self, v: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(self.n_eigen());
        for ((w, rows), cols) in self.w.iter().zip(&self.interior_ranges).zip(&self.eigen_ranges) {
            let local = v.rows(rows.start, rows.len());
            out.rows_mut(cols.start, cols.len()).copy_from(&(w.transpose() * local));
        }
        out
    }

    /// `R_rᵀ Wᵀ y`, accumulated into `out`.
    fn w_extend_add(&self, y: &DVector<f64>, out: &mut DVector<f64>) {
        for ((w, rows), cols) in self.w.iter().zip(&self.interior_ranges).zip(&self.eigen_ranges) {
            let local = w * y.rows(cols.start, cols.len());
            let mut target = out.rows_mut(rows.start, rows.len());
            target += local;
        }
    }

    /// `B_0 v + B_00 v`, each block applied separately.
    fn apply_coarse(&self, v: &DVector<f64>, out: &mut DVector<f64>) {
        let r0v = self.r0.mul_vec(v);
        let wv = self.w_restrict(v);
        let dinv = |x: &DVector<f64>| x.component_div(&self.d);

        // B_C11 v = R_0ᵀ S⁻¹ R_0 v
        let s_r0v = self.solve_schur(&r0v);
        *out += self.r0.tr_mul_vec(&s_r0v);
        // R_rᵀ B_C21 v = −R_rᵀ Wᵀ D⁻¹ Gᵀ S⁻¹ R_0 v
        self.w_extend_add(&-dinv(&(self.g.transpose() * &s_r0v)), out);
        // B_C12 R_r v = −R_0ᵀ S⁻¹ G D⁻¹ W R_r v
        let dwv = dinv(&wv);
        let s_gdwv = self.solve_schur(&(&self.g * &dwv));
        *out -= self.r0.tr_mul_vec(&s_gdwv);
        // R_rᵀ B_C22 R_r v = R_rᵀ Wᵀ (D⁻¹ + D⁻¹ Gᵀ S⁻¹ G D⁻¹) W R_r v
        let inner = &dwv + dinv(&(self.g.transpose() * &s_gdwv));
        self.w_extend_add(&inner, out);
    }

    /// Dense `B_C` on the stacked space of free dofs followed by interior dofs.
    pub fn dense_block_c(&self) -> DMatrix<f64> {
        let n = self.n_free;
        let nr: usize = self.interior_ranges.iter().map(|r| r.len()).sum();
        let r0 = self.r0.to_dense();
        let s_inv = match &self.schur_chol {
            Some(c) => c.inverse(),
            None => DMatrix::zeros(0, 0),
        };
        let dinv = DMatrix::from_diagonal(&self.d.map(|x| 1.0 / x));
        // W as an n_eigen × n_interior matrix
        let mut w = DMatrix::zeros(self.n_eigen(), nr);
        let offset = self.interior_ranges.first().map_or(0, |r| r.start);
        for ((wi, rows), cols) in self.w.iter().zip(&self.interior_ranges).zip(&self.eigen_ranges) {
            w.view_mut((cols.start, rows.start - offset), (cols.len(), rows.len()))
                .copy_from(&wi.transpose());
        }
        let gd = &self.g * &dinv;
        let c11 = r0.transpose() * &s_inv * &r0;
        let c12 = -(r0.transpose() * &s_inv * &gd * &w);
        let c22 = w.transpose() * (&dinv + gd.transpose() * &s_inv * &gd) * &w;
        let mut out = DMatrix::zeros(n + nr, n + nr);
        out.view_mut((0, 0), (n, n)).copy_from(&c11);
        out.view_mut((0, n), (n, nr)).copy_from(&c12);
        out.view_mut((n, 0), (nr, n)).copy_from(&c12.transpose());
        out.view_mut((n, n), (nr, nr)).copy_from(&c22);
        out
    }
}

#[derive(Clone, Debug)]
enum Coarse {
    Reference {
        p: SparseMatrix,
        chol: Option<Cholesky<f64, Dyn>>,
    },
    Blockwise(Box<BlockOperands>),
}

#[derive(Clone, Debug)]
pub struct Preconditioner {
    n: usize,
    coarse: Coarse,
    interior_ranges: Vec<Range<usize>>,
    locals: Vec<Cholesky<f64, Dyn>>,
}

fn local_factors(a22: &[DMatrix<f64>]) -> Result<Vec<Cholesky<f64, Dyn>>> {
    a22.par_iter()
        .enumerate()
        .map(|(i, a)| cholesky(a.clone(), &format!("interior block of subdomain {i}")))
        .collect()
}

impl Preconditioner {
    pub fn build_reference(
        a_free: &SparseMatrix,
        blocks: &BlockMatrices,
        dofs: &FreeDofMap,
        coarse: &EnrichedCoarseBasis,
    ) -> Result<Self> {
        let chol = if coarse.dim() == 0 {
            None
        } else {
            Some(cholesky(coarse.coarse_matrix.clone(), "coarse matrix")?)
        };
        Ok(Self {
            n: a_free.nrows(),
            coarse: Coarse::Reference {
                p: coarse.prolongation.clone(),
                chol,
            },
            interior_ranges: dofs.interior_ranges.clone(),
            locals: local_factors(&blocks.a22)?,
        })
    }

    pub fn build_blockwise(
        a_free: &SparseMatrix,
        blocks: &BlockMatrices,
        dofs: &FreeDofMap,
        avg: &AverageOperator,
        bases: &[LocalEigenBasis],
    ) -> Result<Self> {
        let ops = BlockOperands::build(a_free, blocks, dofs, avg, bases)?;
        Ok(Self {
            n: a_free.nrows(),
            coarse: Coarse::Blockwise(Box::new(ops)),
            interior_ranges: dofs.interior_ranges.clone(),
            locals: local_factors(&blocks.a22)?,
        })
    }

    pub fn mode(&self) -> ApplicationMode {
        match self.coarse {
            Coarse::Reference { .. } => ApplicationMode::Reference,
            Coarse::Blockwise(_) => ApplicationMode::Blockwise,
        }
    }

    pub fn block_operands(&self) -> Option<&BlockOperands> {
        match &self.coarse {
            Coarse::Blockwise(ops) => Some(ops),
            Coarse::Reference { .. } => None,
        }
    }

    pub fn apply(&self, v: &DVector<f64>) -> Result<DVector<f64>> {
        if v.len() != self.n {
            return Err(Error::DimensionMismatch {
                expected: self.n,
                actual: v.len(),
            });
        }
        let mut out = DVector::zeros(self.n);
        self.apply_unchecked(v, &mut out);
        Ok(out)
    }

    fn apply_unchecked(&self, v: &DVector<f64>, out: &mut DVector<f64>) {
        out.fill(0.0);
        match &self.coarse {
            Coarse::Reference { p, chol } => {
                if let Some(chol) = chol {
                    let y = chol.solve(&p.tr_mul_vec(v));
                    *out += p.mul_vec(&y);
                }
            }
            Coarse::Blockwise(ops) => ops.apply_coarse(v, out),
        }
        for (chol, rows) in self.locals.iter().zip(&self.interior_ranges) {
            let local = chol.solve(&v.rows(rows.start, rows.len()).into_owned());
            let mut target = out.rows_mut(rows.start, rows.len());
            target += local;
        }
    }
}

impl LinearOperator for Preconditioner {
    fn dim(&self) -> usize {
        self.n
    }

    fn apply_into(&self, x: &DVector<f64>, y: &mut DVector<f64>) {
        assert_eq!(x.len(), self.n, "preconditioner dimension");
        self.apply_unchecked(x, y);
    }
}
