//! Preconditioned conjugate gradients and condition number estimates.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{cholesky, LinearOperator, SparseMatrix};

pub const DEFAULT_TOL: f64 = 5e-6;
pub const DEFAULT_DENSE_CAP: usize = 8000;

/// Which residual the stopping test measures.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResidualNorm {
    /// `‖b − A x‖₂ / ‖b‖₂`.
    #[default]
    True,
    /// `√(rᵀ B r) / √(bᵀ B b)`.
    Preconditioned,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PcgOptions {
    pub tol: f64,
    pub max_iter: usize,
    pub residual: ResidualNorm,
}

impl Default for PcgOptions {
    fn default() -> Self {
        Self {
            tol: DEFAULT_TOL,
            max_iter: 2000,
            residual: ResidualNorm::True,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KappaMethod {
    Dense,
    Lanczos,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KappaEstimate {
    pub method: KappaMethod,
    pub kappa: f64,
    pub lambda_max: f64,
    pub lambda_min: f64,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct SolveReport {
    pub iterations: usize,
    /// Relative residual after each iteration.
    pub residuals: Vec<f64>,
    pub converged: bool,
    pub alphas: Vec<f64>,
    pub betas: Vec<f64>,
    pub kappa: Option<KappaEstimate>,
}

impl SolveReport {
    /// Lanczos tridiagonal built from the CG step lengths.
    pub fn lanczos_matrix(&self) -> DMatrix<f64> {
        let k = self.alphas.len();
        let mut t = DMatrix::zeros(k, k);
        for j in 0..k {
            t[(j, j)] = 1.0 / self.alphas[j];
            if j > 0 {
                let (a_prev, b_prev) = (self.alphas[j - 1], self.betas[j - 1]);
                t[(j, j)] += b_prev / a_prev;
                let off = b_prev.sqrt() / a_prev;
                t[(j, j - 1)] = off;
                t[(j - 1, j)] = off;
            }
        }
        t
    }
}

pub fn pcg(
    a: &impl LinearOperator,
    b: &DVector<f64>,
    prec: &impl LinearOperator,
    opts: &PcgOptions,
) -> Result<(DVector<f64>, SolveReport)> {
    let n = a.dim();
    if b.len() != n || prec.dim() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            actual: if b.len() != n { b.len() } else { prec.dim() },
        });
    }
    if !(opts.tol > 0.0) {
        return Err(Error::InvalidArgument(format!("tolerance {} must be positive", opts.tol)));
    }
    let mut x = DVector::zeros(n);
    let mut report = SolveReport::default();
    let b_norm = b.norm();
    if b_norm == 0.0 {
        report.converged = true;
        return Ok((x, report));
    }

    let mut r = b.clone();
    let mut z = prec.apply_to(&r);
    let mut rz = r.dot(&z);
    let rz0 = rz;
    let mut p = z.clone();
    let mut q = DVector::zeros(n);
    while report.iterations < opts.max_iter {
        a.apply_into(&p, &mut q);
        let pq = p.dot(&q);
        if pq == 0.0 && p.amax() == 0.0 {
            break;
        }
        if !(pq > 0.0) {
            return Err(Error::NotPositiveDefinite(format!(
                "pᵀAp = {pq:e} at iteration {}",
                report.iterations
            )));
        }
        let alpha = rz / pq;
        x.axpy(alpha, &p, 1.0);
        r.axpy(-alpha, &q, 1.0);
        report.alphas.push(alpha);
        report.iterations += 1;

        let mut restart = false;
        if opts.residual == ResidualNorm::True && r.norm() / b_norm <= opts.tol {
            // the recurrence may drift from b − A x; continue from the explicit residual
            let explicit = b - a.apply_to(&x);
            if explicit.norm() / b_norm > opts.tol {
                r = explicit;
                restart = true;
            }
        }
        prec.apply_into(&r, &mut z);
        let rz_new = r.dot(&z);
        let rel = match opts.residual {
            ResidualNorm::True => r.norm() / b_norm,
            ResidualNorm::Preconditioned => (rz_new.max(0.0) / rz0).sqrt(),
        };
        report.residuals.push(rel);
        if rel <= opts.tol {
            report.converged = true;
            break;
        }
        let beta = if restart { 0.0 } else { rz_new / rz };
        report.betas.push(beta);
        rz = rz_new;
        p *= beta;
        p += &z;
    }
    report.betas.truncate(report.alphas.len().saturating_sub(1));
    Ok((x, report))
}

/// Ritz extremes of the Lanczos tridiagonal from a PCG run.
pub fn condition_number_lanczos(report: &SolveReport) -> Result<KappaEstimate> {
    if report.alphas.len() < 3 {
        return Err(Error::InsufficientIterations(report.alphas.len()));
    }
    let eig = SymmetricEigen::new(report.lanczos_matrix()).eigenvalues;
    let lambda_max = eig.max();
    let lambda_min = eig.min();
    Ok(KappaEstimate {
        method: KappaMethod::Lanczos,
        kappa: lambda_max / lambda_min,
        lambda_max,
        lambda_min,
    })
}

/// Eigenvalues of `B A` through the similar symmetric matrix `Lᵀ B L`, `A = L Lᵀ`.
pub fn preconditioned_spectrum(
    a: &SparseMatrix,
    prec: &impl LinearOperator,
    cap: usize,
) -> Result<DVector<f64>> {
    let n = a.nrows();
    if n > cap {
        return Err(Error::DenseCapExceeded { size: n, cap });
    }
    if prec.dim() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            actual: prec.dim(),
        });
    }
    let l = cholesky(a.to_dense(), "system matrix")?.unpack();
    let mut bl = DMatrix::zeros(n, n);
    let mut y = DVector::zeros(n);
    for j in 0..n {
        let col = l.column(j).into_owned();
        prec.apply_into(&col, &mut y);
        bl.set_column(j, &y);
    }
    let mut m = l.tr_mul(&bl);
    drop(bl);
    drop(l);
    m = (&m + m.transpose()) * 0.5;
    let mut eig = m.symmetric_eigenvalues();
    eig.as_mut_slice().sort_by(f64::total_cmp);
    if eig.len() > 0 && !(eig[0] > 0.0) {
        return Err(Error::NotPositiveDefinite(format!(
            "preconditioned operator has eigenvalue {:e}",
            eig[0]
        )));
    }
    Ok(eig)
}

pub fn condition_number_dense(
    a: &SparseMatrix,
    prec: &impl LinearOperator,
    cap: usize,
) -> Result<KappaEstimate> {
    let eig = preconditioned_spectrum(a, prec, cap)?;
    let (lambda_min, lambda_max) = (eig[0], eig[eig.len() - 1]);
    Ok(KappaEstimate {
        method: KappaMethod::Dense,
        kappa: lambda_max / lambda_min,
        lambda_max,
        lambda_min,
    })
}

/// `⌈½ √κ ln(2/tol)⌉`, the classical CG iteration bound.
pub fn iteration_bound(kappa: f64, tol: f64) -> usize {
    (0.5 * kappa.sqrt() * (2.0 / tol).ln()).ceil() as usize
}
