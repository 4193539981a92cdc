//! Averaging coarse space and its spectral enrichment.

use std::io::Write;
use std::ops::Range;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::assembly::{interior_stiffness, StiffnessWeight};
use crate::coefficients::CoefficientField;
use crate::error::{Error, Result};
use crate::geometry::{CoarsePartition, SideKind, SubdomainId, SubdomainMesh};
use crate::linalg::{cholesky, SparseMatrix};
use crate::mortar::FreeDofMap;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EnrichmentType {
    #[serde(rename = "I", alias = "1")]
    I,
    #[serde(rename = "II", alias = "2")]
    II,
}

impl EnrichmentType {
    pub fn weight(self) -> StiffnessWeight {
        match self {
            EnrichmentType::I => StiffnessWeight::TypeI,
            EnrichmentType::II => StiffnessWeight::TypeII,
        }
    }
}

impl std::fmt::Display for EnrichmentType {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            EnrichmentType::I => "I",
            EnrichmentType::II => "II",
        })
    }
}

/// `P_0 = R_0ᵀ`: identity on the skeleton (corner and mortar) dofs, and on the
/// interior of each subdomain the mean of the mortar-trace averages of its
/// interface sides.
#[derive(Clone, Debug)]
pub struct AverageOperator {
    pub prolongation: SparseMatrix,
    /// Number of interface sides of each subdomain.
    pub mu: Vec<usize>,
    /// `ū_i` as weights on skeleton dofs.
    pub functionals: Vec<Vec<(usize, f64)>>,
}

impl AverageOperator {
    pub fn n_skeleton(&self) -> usize {
        self.prolongation.ncols()
    }

    pub fn restriction(&self) -> SparseMatrix {
        self.prolongation.transpose()
    }
}

/// Weights of the exact mean of a P1 trace over a uniform edge with `n` intervals.
fn trapezoid_weights(n: usize) -> Vec<f64> {
    let mut w = vec![1.0 / n as f64; n + 1];
    w[0] *= 0.5;
    w[n] *= 0.5;
    w
}

/// A subdomain whose sides all lie on the outer boundary averages zero traces,
/// so its interior rows vanish.
pub fn build_average_operator(
    partition: &CoarsePartition,
    dofs: &FreeDofMap,
) -> Result<AverageOperator> {
    let n_skel = dofs.n_skeleton();
    let mut mu = Vec::with_capacity(partition.len());
    let mut functionals = Vec::with_capacity(partition.len());
    for sub in &partition.subdomains {
        let mut acc = vec![0.0; n_skel];
        let mut count = 0;
        for kind in sub.sides {
            let SideKind::Interface(iface) = kind else { continue };
            count += 1;
            let trace = &dofs.mortar_trace[iface];
            for (w, dof) in trapezoid_weights(trace.len() - 1).into_iter().zip(trace) {
                if let Some(d) = dof {
                    acc[*d] += w;
                }
            }
        }
        let functional: Vec<(usize, f64)> = acc
            .into_iter()
            .enumerate()
            .filter(|(_, w)| *w != 0.0)
            .map(|(j, w)| (j, w / count as f64))
            .collect();
        mu.push(count);
        functionals.push(functional);
    }

    let mut entries: Vec<(usize, usize, f64)> = (0..n_skel).map(|j| (j, j, 1.0)).collect();
    for (sub, range) in dofs.interior_ranges.iter().enumerate() {
        for row in range.clone() {
            entries.extend(functionals[sub].iter().map(|&(j, w)| (row, j, w)));
        }
    }
    Ok(AverageOperator {
        prolongation: SparseMatrix::from_triplets(dofs.dim(), n_skel, entries),
        mu,
        functionals,
    })
}

/// Full spectrum of `A x = λ B x` on the interior of one subdomain.
#[derive(Clone, Debug)]
pub struct LocalEigenBasis {
    pub subdomain: SubdomainId,
    pub kind: EnrichmentType,
    /// Nonincreasing.
    pub eigenvalues: DVector<f64>,
    /// `B`-orthonormal columns, ordered as the eigenvalues.
    pub eigenvectors: DMatrix<f64>,
    pub selected: usize,
}

impl LocalEigenBasis {
    pub fn len(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eigenvalues.is_empty()
    }

    pub fn selected_vectors(&self) -> DMatrix<f64> {
        self.eigenvectors.columns(0, self.selected).into_owned()
    }

    pub fn selected_values(&self) -> &[f64] {
        &self.eigenvalues.as_slice()[..self.selected]
    }

    /// `‖A x_k − λ_k B x_k‖₂ / (λ_k ‖x_k‖₂)` for every pair.
    pub fn relative_residuals(&self, a: &DMatrix<f64>, b: &DMatrix<f64>) -> Vec<f64> {
        self.eigenvectors
            .column_iter()
            .zip(self.eigenvalues.iter())
            .map(|(x, &lam)| (a * x - lam * (b * x)).norm() / (lam * x.norm()))
            .collect()
    }
}

pub fn solve_local_eigenproblem(
    subdomain: SubdomainId,
    kind: EnrichmentType,
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
) -> Result<LocalEigenBasis> {
    let n = a.nrows();
    if a.shape() != b.shape() || a.ncols() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            actual: b.nrows(),
        });
    }
    cholesky(b.clone(), &format!("local B matrix of subdomain {subdomain}"))?;
    // B x = μ A x with μ = 1/λ ∈ (0, 1]: the eigenvalues near 1 keep full
    // accuracy even when λ_max is large
    let l = cholesky(a.clone(), &format!("local A matrix of subdomain {subdomain}"))?.unpack();
    let lb = l.solve_lower_triangular(b).expect("nonzero diagonal");
    let mut c = l
        .solve_lower_triangular(&lb.transpose())
        .expect("nonzero diagonal");
    c = (&c + c.transpose()) * 0.5;
    let eig = SymmetricEigen::new(c);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    if let Some(&k) = order.first() {
        if !(eig.eigenvalues[k] > 0.0) {
            return Err(Error::NotPositiveDefinite(format!(
                "local B matrix of subdomain {subdomain} relative to A"
            )));
        }
    }
    let eigenvalues = DVector::from_iterator(n, order.iter().map(|&k| 1.0 / eig.eigenvalues[k]));
    let y = DMatrix::from_columns(
        &order
            .iter()
            .map(|&k| eig.eigenvectors.column(k) * eig.eigenvalues[k].sqrt().recip())
            .collect::<Vec<_>>(),
    );
    // xᵀ A x = 1/μ and xᵀ B x = 1
    let eigenvectors = l
        .transpose()
        .solve_upper_triangular(&y)
        .expect("nonzero diagonal");
    Ok(LocalEigenBasis {
        subdomain,
        kind,
        eigenvalues,
        eigenvectors,
        selected: 0,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionPolicy {
    /// Keep every eigenpair with `λ > τ`.
    Threshold(f64),
    /// Keep the `m` largest (all when fewer exist).
    Fixed(usize),
}

impl SelectionPolicy {
    pub fn validate(&self) -> Result<()> {
        match *self {
            SelectionPolicy::Threshold(t) if !t.is_finite() => {
                Err(Error::InvalidArgument(format!("threshold {t} is not finite")))
            }
            _ => Ok(()),
        }
    }
}

impl std::fmt::Display for SelectionPolicy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SelectionPolicy::Threshold(t) => write!(f, "threshold:{t}"),
            SelectionPolicy::Fixed(m) => write!(f, "fixed:{m}"),
        }
    }
}

pub fn select_enrichment(basis: &LocalEigenBasis, policy: SelectionPolicy) -> usize {
    match policy {
        SelectionPolicy::Threshold(tau) => basis.eigenvalues.iter().take_while(|&&l| l > tau).count(),
        SelectionPolicy::Fixed(m) => m.min(basis.len()),
    }
}

/// Local eigenbases of every subdomain, with the selection applied.
pub fn compute_local_bases(
    meshes: &[SubdomainMesh],
    field: &CoefficientField,
    kind: EnrichmentType,
    policy: SelectionPolicy,
) -> Result<Vec<LocalEigenBasis>> {
    policy.validate()?;
    meshes
        .par_iter()
        .map(|mesh| {
            let a = interior_stiffness(mesh, field, StiffnessWeight::True)?;
            let b = interior_stiffness(mesh, field, kind.weight())?;
            let mut basis = solve_local_eigenproblem(mesh.subdomain, kind, &a, &b)?;
            basis.selected = select_enrichment(&basis, policy);
            Ok(basis)
        })
        .collect()
}

/// Writes `subdomain,type,index,eigenvalue,selected` rows.
pub fn write_spectra_csv<W: Write>(bases: &[LocalEigenBasis], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["subdomain", "type", "index", "eigenvalue", "selected"])?;
    for b in bases {
        for (k, lam) in b.eigenvalues.iter().enumerate() {
            w.write_record([
                b.subdomain.to_string(),
                b.kind.to_string(),
                k.to_string(),
                format!("{lam:e}"),
                (k < b.selected).to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// `P_c = [P_0 | selected eigenvectors extended by zero]` and the coarse matrix `P_cᵀ A P_c`.
#[derive(Clone, Debug)]
pub struct EnrichedCoarseBasis {
    pub prolongation: SparseMatrix,
    pub n_skeleton: usize,
    /// Columns of each subdomain's eigenvectors.
    pub ranges: Vec<Range<usize>>,
    /// Selected eigenvalues in column order.
    pub eigenvalues: Vec<f64>,
    pub coarse_matrix: DMatrix<f64>,
}

impl EnrichedCoarseBasis {
    pub fn dim(&self) -> usize {
        self.prolongation.ncols()
    }

    pub fn n_enrichment(&self) -> usize {
        self.dim() - self.n_skeleton
    }
}

/// Columns spanned by the selected eigenvectors, extended by zero outside their interiors.
pub fn eigen_columns(dofs: &FreeDofMap, bases: &[LocalEigenBasis]) -> Result<(SparseMatrix, Vec<Range<usize>>)> {
    let mut entries = Vec::new();
    let mut ranges = Vec::with_capacity(bases.len());
    let mut col = 0;
    for basis in bases {
        let rows = dofs.interior_ranges[basis.subdomain].clone();
        if rows.len() != basis.eigenvectors.nrows() {
            return Err(Error::DimensionMismatch {
                expected: rows.len(),
                actual: basis.eigenvectors.nrows(),
            });
        }
        let start = col;
        for k in 0..basis.selected {
            for (i, row) in rows.clone().enumerate() {
                entries.push((row, col, basis.eigenvectors[(i, k)]));
            }
            col += 1;
        }
        ranges.push(start..col);
    }
    Ok((SparseMatrix::from_triplets(dofs.dim(), col, entries), ranges))
}

const PIVOT_TOL: f64 = 1e-12;

/// Cholesky with a relative pivot floor; `false` signals numerical rank loss.
fn gram_is_definite(g: &DMatrix<f64>) -> bool {
    let Some(ch) = nalgebra::Cholesky::new(g.clone()) else {
        return false;
    };
    let l = ch.l();
    (0..g.nrows()).all(|j| l[(j, j)] * l[(j, j)] > PIVOT_TOL * g[(j, j)])
}

pub fn build_enriched_basis(
    avg: &AverageOperator,
    bases: &[LocalEigenBasis],
    dofs: &FreeDofMap,
    a_free: &SparseMatrix,
) -> Result<EnrichedCoarseBasis> {
    let n_skel = avg.n_skeleton();
    let (eig, local_ranges) = eigen_columns(dofs, bases)?;
    let p0 = &avg.prolongation;
    let entries = p0
        .triplets()
        .chain(eig.triplets().map(|(i, j, v)| (i, j + n_skel, v)));
    let p = SparseMatrix::from_triplets(dofs.dim(), n_skel + eig.ncols(), entries);
    let gram = p.transpose().matmul(&a_free.matmul(&p)).to_dense();
    let gram = (&gram + gram.transpose()) * 0.5;

    if !gram_is_definite(&gram) {
        if !gram_is_definite(&gram.view((0, 0), (n_skel, n_skel)).into_owned()) {
            return Err(Error::NotPositiveDefinite("unenriched coarse matrix".into()));
        }
        for (sub, r) in local_ranges.iter().enumerate() {
            let n = n_skel + r.end;
            if !gram_is_definite(&gram.view((0, 0), (n, n)).into_owned()) {
                return Err(Error::RankDeficientCoarse { subdomain: sub });
            }
        }
        return Err(Error::NotPositiveDefinite("enriched coarse matrix".into()));
    }

    Ok(EnrichedCoarseBasis {
        prolongation: p,
        n_skeleton: n_skel,
        ranges: local_ranges.iter().map(|r| r.start + n_skel..r.end + n_skel).collect(),
        eigenvalues: bases.iter().flat_map(|b| b.selected_values().to_vec()).collect(),
        coarse_matrix: gram,
    })
}
