//! P1 stiffness and load assembly on the broken space.
//!
//! The broken space is the product of the per-subdomain P1 spaces with no
//! continuity across interfaces. Nodes on the outer boundary carry the
//! homogeneous Dirichlet condition and are never indexed.

use std::f64::consts::PI;
use std::ops::Range;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::coefficients::{subdomain_minima, CoefficientField};
use crate::error::{Error, Result};
use crate::geometry::{CoarsePartition, NodeKind, SideKind, SubdomainId, SubdomainMesh};
use crate::linalg::SparseMatrix;
use crate::mortar::FreeDofMap;

/// Which coefficient the stiffness matrix is built with.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum StiffnessWeight {
    /// The actual coefficient on every triangle.
    True,
    /// The subdomain-wide minimum on every triangle.
    TypeI,
    /// The boundary-layer minimum on layer triangles, the actual coefficient elsewhere.
    TypeII,
}

/// Source term `2π² sin(πx) sin(πy)` used by the experiments.
pub fn sine_source(x: f64, y: f64) -> f64 {
    2.0 * PI * PI * (PI * x).sin() * (PI * y).sin()
}

/// Element stiffness `α |τ| Gᵀ G` of a P1 triangle.
pub fn element_stiffness(p: [[f64; 2]; 3], alpha: f64) -> [[f64; 3]; 3] {
    let det = (p[1][0] - p[0][0]) * (p[2][1] - p[0][1]) - (p[2][0] - p[0][0]) * (p[1][1] - p[0][1]);
    let area = 0.5 * det.abs();
    // barycentric gradients scaled by 2|τ|
    let b = [p[1][1] - p[2][1], p[2][1] - p[0][1], p[0][1] - p[1][1]];
    let c = [p[2][0] - p[1][0], p[0][0] - p[2][0], p[1][0] - p[0][0]];
    let scale = alpha / (4.0 * area);
    let mut k = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            k[i][j] = scale * (b[i] * b[j] + c[i] * c[j]);
        }
    }
    k
}

/// Per-triangle coefficient for the requested weighting.
pub fn triangle_weights(
    field: &CoefficientField,
    mesh: &SubdomainMesh,
    weight: StiffnessWeight,
) -> Result<Vec<f64>> {
    field.check_mesh(mesh)?;
    let vals = field.subdomain(mesh.subdomain);
    Ok(match weight {
        StiffnessWeight::True => vals.to_vec(),
        StiffnessWeight::TypeI => {
            let min = subdomain_minima(field, mesh)?.full;
            vec![min; vals.len()]
        }
        StiffnessWeight::TypeII => {
            let min = subdomain_minima(field, mesh)?.layer;
            vals.iter()
                .zip(&mesh.in_layer)
                .map(|(&a, &layer)| if layer { min } else { a })
                .collect()
        }
    })
}

/// Global numbering of broken-space nodes, subdomain by subdomain.
#[derive(Clone, Debug)]
pub struct BrokenSpace {
    /// Global index of every local node, `None` on the outer boundary.
    pub local_to_global: Vec<Vec<Option<usize>>>,
    /// `(subdomain, local node)` of every global index.
    pub owner: Vec<(SubdomainId, usize)>,
    pub ranges: Vec<Range<usize>>,
}

impl BrokenSpace {
    pub fn new(partition: &CoarsePartition, meshes: &[SubdomainMesh]) -> Self {
        let mut local_to_global = Vec::with_capacity(meshes.len());
        let mut owner = Vec::new();
        let mut ranges = Vec::with_capacity(meshes.len());
        for mesh in meshes {
            let sub = &partition.subdomains[mesh.subdomain];
            let start = owner.len();
            let map = mesh
                .kinds
                .iter()
                .enumerate()
                .map(|(v, kind)| {
                    let dirichlet = match *kind {
                        NodeKind::Interior => false,
                        NodeKind::Edge(side) => sub.side(side) == SideKind::Boundary,
                        NodeKind::Corner(c) => partition.is_boundary_vertex(sub.corner_vertex(c)),
                    };
                    (!dirichlet).then(|| {
                        owner.push((mesh.subdomain, v));
                        owner.len() - 1
                    })
                })
                .collect();
            local_to_global.push(map);
            ranges.push(start..owner.len());
        }
        Self {
            local_to_global,
            owner,
            ranges,
        }
    }

    pub fn dim(&self) -> usize {
        self.owner.len()
    }

    pub fn global(&self, subdomain: SubdomainId, node: usize) -> Option<usize> {
        self.local_to_global[subdomain][node]
    }
}

/// Stiffness matrix on the broken space for the given weighting.
pub fn assemble_stiffness(
    space: &BrokenSpace,
    meshes: &[SubdomainMesh],
    field: &CoefficientField,
    weight: StiffnessWeight,
) -> Result<SparseMatrix> {
    let mut entries = Vec::new();
    for mesh in meshes {
        let alphas = triangle_weights(field, mesh, weight)?;
        let map = &space.local_to_global[mesh.subdomain];
        for (t, tri) in mesh.triangles.iter().enumerate() {
            let k = element_stiffness(tri.map(|v| mesh.coords[v]), alphas[t]);
            for a in 0..3 {
                let Some(i) = map[tri[a]] else { continue };
                for b in 0..3 {
                    if let Some(j) = map[tri[b]] {
                        entries.push((i, j, k[a][b]));
                    }
                }
            }
        }
    }
    Ok(SparseMatrix::from_triplets(space.dim(), space.dim(), entries))
}

/// Dense stiffness of one subdomain restricted to its interior nodes (ordered as `mesh.interior`).
pub fn interior_stiffness(
    mesh: &SubdomainMesh,
    field: &CoefficientField,
    weight: StiffnessWeight,
) -> Result<DMatrix<f64>> {
    let alphas = triangle_weights(field, mesh, weight)?;
    let mut index = vec![usize::MAX; mesh.n_nodes()];
    for (k, &v) in mesh.interior.iter().enumerate() {
        index[v] = k;
    }
    let n = mesh.interior.len();
    let mut a = DMatrix::zeros(n, n);
    for (t, tri) in mesh.triangles.iter().enumerate() {
        let k = element_stiffness(tri.map(|v| mesh.coords[v]), alphas[t]);
        for p in 0..3 {
            let i = index[tri[p]];
            if i == usize::MAX {
                continue;
            }
            for q in 0..3 {
                let j = index[tri[q]];
                if j != usize::MAX {
                    a[(i, j)] += k[p][q];
                }
            }
        }
    }
    Ok(a)
}

/// Load vector `∫ f φ_l` with the edge-midpoint rule, exact for quadratic integrands.
pub fn assemble_load(
    space: &BrokenSpace,
    meshes: &[SubdomainMesh],
    f: impl Fn(f64, f64) -> f64,
) -> DVector<f64> {
    let mut load = DVector::zeros(space.dim());
    for mesh in meshes {
        let map = &space.local_to_global[mesh.subdomain];
        for (t, tri) in mesh.triangles.iter().enumerate() {
            let p = tri.map(|v| mesh.coords[v]);
            let area = mesh.triangle_area(t);
            let mid = |a: usize, b: usize| f(0.5 * (p[a][0] + p[b][0]), 0.5 * (p[a][1] + p[b][1]));
            let (f01, f12, f20) = (mid(0, 1), mid(1, 2), mid(2, 0));
            // φ_a is 1/2 at the two midpoints of edges through vertex a
            let contrib = [
                0.5 * (f01 + f20),
                0.5 * (f01 + f12),
                0.5 * (f12 + f20),
            ];
            for a in 0..3 {
                if let Some(i) = map[tri[a]] {
                    load[i] += area / 3.0 * contrib[a];
                }
            }
        }
    }
    load
}

/// Stiffness and load on the broken space.
#[derive(Clone, Debug)]
pub struct BrokenSystem {
    pub space: BrokenSpace,
    pub stiffness: SparseMatrix,
    pub load: DVector<f64>,
}

impl BrokenSystem {
    pub fn assemble(
        partition: &CoarsePartition,
        meshes: &[SubdomainMesh],
        field: &CoefficientField,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Self> {
        let space = BrokenSpace::new(partition, meshes);
        let stiffness = assemble_stiffness(&space, meshes, field, StiffnessWeight::True)?;
        let load = assemble_load(&space, meshes, f);
        Ok(Self {
            space,
            stiffness,
            load,
        })
    }

    /// Global indices of the interior nodes of one subdomain, in `mesh.interior` order.
    pub fn interior_indices(&self, mesh: &SubdomainMesh) -> Vec<usize> {
        mesh.interior
            .iter()
            .map(|&v| self.space.global(mesh.subdomain, v).expect("interior node is indexed"))
            .collect()
    }
}

/// The blocks `A_N^(11)`, `A_N^(12)` and `A_N^(22) = diag(A_Ωi)` of the constrained matrix.
#[derive(Clone, Debug)]
pub struct BlockMatrices {
    /// All free dofs: corner, mortar and interior.
    pub a11: SparseMatrix,
    /// All free dofs against interior dofs.
    pub a12: SparseMatrix,
    /// Interior block of each subdomain.
    pub a22: Vec<DMatrix<f64>>,
}

pub fn extract_blocks(a: &SparseMatrix, dofs: &FreeDofMap) -> Result<BlockMatrices> {
    let n = dofs.dim();
    if a.nrows() != n || a.ncols() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            actual: a.nrows(),
        });
    }
    let interior = dofs.interior_range();
    let mut expected = interior.start;
    for r in &dofs.interior_ranges {
        if r.start != expected {
            return Err(Error::DofClassification(format!(
                "interior range {r:?} does not continue at {expected}"
            )));
        }
        expected = r.end;
    }
    if expected != interior.end || interior.end != n {
        return Err(Error::DofClassification(
            "interior dofs do not close the free numbering".into(),
        ));
    }

    let all: Vec<usize> = (0..n).collect();
    let interior_idx: Vec<usize> = interior.collect();
    let a22 = dofs
        .interior_ranges
        .iter()
        .map(|r| {
            let idx: Vec<usize> = r.clone().collect();
            a.dense_submatrix(&idx, &idx)
        })
        .collect();
    Ok(BlockMatrices {
        a11: a.clone(),
        a12: a.submatrix(&all, &interior_idx),
        a22,
    })
}
