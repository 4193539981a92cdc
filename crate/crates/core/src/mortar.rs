//! Mortar coupling across nonmatching interfaces.
//!
//! On every interface the nonmortar (slave) trace is tied to the mortar trace
//! by requiring `∫ (u_mortar − u_slave) ψ = 0` for all test functions `ψ`. The
//! resulting relation `ν_s = S⁻¹ (M ν_m − C ν_c)` eliminates the interior slave
//! values, leaving corner, mortar and interior nodes as free unknowns.

use std::ops::Range;

use nalgebra::{DMatrix, DVector, Dyn, LU};

use crate::assembly::BrokenSystem;
use crate::error::{Error, Result};
use crate::geometry::{
    CoarsePartition, Interface, InterfaceSideAssignment, NodeKind, SideKind, SidePair, SubdomainId,
    SubdomainMesh,
};
use crate::linalg::SparseMatrix;

const GAUSS_2: [f64; 2] = [0.211_324_865_405_187_1, 0.788_675_134_594_812_9];

/// Continuous piecewise linear function on `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct PiecewiseLinear {
    breaks: Vec<f64>,
    values: Vec<f64>,
}

impl PiecewiseLinear {
    pub fn new(breaks: Vec<f64>, values: Vec<f64>) -> Self {
        assert_eq!(breaks.len(), values.len());
        assert!(breaks.windows(2).all(|w| w[0] < w[1]));
        Self { breaks, values }
    }

    /// Nodal values on the uniform grid `k / (values.len() - 1)`.
    pub fn uniform(values: Vec<f64>) -> Self {
        let n = values.len() - 1;
        Self::new(uniform_breaks(n), values)
    }

    /// Hat function of node `k` on a uniform grid with `n` intervals.
    pub fn hat(n: usize, k: usize) -> Self {
        let mut values = vec![0.0; n + 1];
        values[k] = 1.0;
        Self::uniform(values)
    }

    pub fn breaks(&self) -> &[f64] {
        &self.breaks
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn eval(&self, t: f64) -> f64 {
        let b = &self.breaks;
        let k = match b.partition_point(|&x| x <= t) {
            0 => 0,
            k if k >= b.len() => b.len() - 2,
            k => k - 1,
        };
        let s = (t - b[k]) / (b[k + 1] - b[k]);
        self.values[k] * (1.0 - s) + self.values[k + 1] * s
    }
}

fn uniform_breaks(n: usize) -> Vec<f64> {
    (0..=n).map(|k| k as f64 / n as f64).collect()
}

/// `∫ f g` over a segment of the given length, exact for piecewise linear
/// factors: both breakpoint sets are merged and each piece uses two-point Gauss.
pub fn l2_inner(f: &PiecewiseLinear, g: &PiecewiseLinear, length: f64) -> f64 {
    let mut merged: Vec<f64> = f.breaks.iter().chain(&g.breaks).copied().collect();
    merged.sort_by(f64::total_cmp);
    merged.dedup_by(|a, b| (*a - *b).abs() < 1e-14);
    merged
        .windows(2)
        .map(|w| {
            let (a, b) = (w[0], w[1]);
            let width = b - a;
            GAUSS_2
                .iter()
                .map(|&s| {
                    let t = a + s * width;
                    f.eval(t) * g.eval(t)
                })
                .sum::<f64>()
                * 0.5
                * width
        })
        .sum::<f64>()
        * length
}

/// Test functions on a nonmortar side with `n_s` interior nodes: interior hats,
/// with the first and last taking the value 1 on the end elements.
#[derive(Clone, Debug)]
pub struct TestSpace {
    pub functions: Vec<PiecewiseLinear>,
}

impl TestSpace {
    pub fn len(&self) -> usize {
        self.functions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.functions.is_empty()
    }
}

pub fn build_test_space(n_s: usize) -> Result<TestSpace> {
    if n_s == 0 {
        return Err(Error::InvalidArgument(
            "nonmortar side has no interior nodes".into(),
        ));
    }
    let n = n_s + 1;
    let functions = (1..=n_s)
        .map(|k| {
            let mut values = vec![0.0; n + 1];
            values[k] = 1.0;
            if k == 1 {
                values[0] = 1.0;
            }
            if k == n_s {
                values[n] = 1.0;
            }
            PiecewiseLinear::uniform(values)
        })
        .collect();
    Ok(TestSpace { functions })
}

/// Mortar matrices of one interface and the slave elimination built from them.
#[derive(Clone, Debug)]
pub struct MortarCoupling {
    pub interface: usize,
    pub mortar: SubdomainId,
    pub nonmortar: SubdomainId,
    pub length: f64,
    /// Local nodes `m_0 … m_{n_m+1}` of the mortar mesh.
    pub mortar_nodes: Vec<usize>,
    /// Local nodes `s_0 … s_{n_s+1}` of the nonmortar mesh.
    pub nonmortar_nodes: Vec<usize>,
    pub test_space: TestSpace,
    /// `(ψ_i, φ_{m_j})`, `n_s × (n_m + 2)`.
    pub m: DMatrix<f64>,
    /// `(ψ_i, φ_{s_j})` for interior slave nodes, `n_s × n_s`.
    pub s: DMatrix<f64>,
    /// `(ψ_i, φ_{s_0})` and `(ψ_i, φ_{s_{n_s+1}})`, `n_s × 2`.
    pub c: DMatrix<f64>,
    s_lu: LU<f64, Dyn, Dyn>,
    /// `S⁻¹ M`.
    pub from_mortar: DMatrix<f64>,
    /// `−S⁻¹ C`.
    pub from_ends: DMatrix<f64>,
}

impl MortarCoupling {
    pub fn n_mortar(&self) -> usize {
        self.mortar_nodes.len() - 2
    }

    pub fn n_slave(&self) -> usize {
        self.nonmortar_nodes.len() - 2
    }

    /// Interior slave values from mortar trace values `ν_m` and slave end values `ν_c`.
    pub fn eliminate(&self, nu_m: &DVector<f64>, nu_c: &DVector<f64>) -> DVector<f64> {
        let rhs = &self.m * nu_m - &self.c * nu_c;
        self.s_lu.solve(&rhs).expect("S is nonsingular by construction")
    }
}

pub fn assemble_coupling(
    iface: &Interface,
    pair: &SidePair,
    meshes: &[SubdomainMesh],
) -> Result<MortarCoupling> {
    let mortar_mesh = &meshes[pair.mortar];
    let slave_mesh = &meshes[pair.nonmortar];
    let mortar_nodes = mortar_mesh.edge_nodes(iface.side_of(pair.mortar).expect("adjacent"));
    let nonmortar_nodes = slave_mesh.edge_nodes(iface.side_of(pair.nonmortar).expect("adjacent"));
    let (nm_int, ns_int) = (mortar_nodes.len() - 1, nonmortar_nodes.len() - 1);
    let n_s = ns_int - 1;
    let test_space = build_test_space(n_s).map_err(|_| Error::EmptyNonmortarSide {
        interface: iface.id,
    })?;

    let a = mortar_mesh.coords[mortar_nodes[0]];
    let b = mortar_mesh.coords[*mortar_nodes.last().unwrap()];
    let length = ((b[0] - a[0]).powi(2) + (b[1] - a[1]).powi(2)).sqrt();

    let mortar_hats: Vec<_> = (0..=nm_int).map(|j| PiecewiseLinear::hat(nm_int, j)).collect();
    let slave_hats: Vec<_> = (0..=ns_int).map(|j| PiecewiseLinear::hat(ns_int, j)).collect();

    let m = DMatrix::from_fn(n_s, nm_int + 1, |i, j| {
        l2_inner(&test_space.functions[i], &mortar_hats[j], length)
    });
    let s = DMatrix::from_fn(n_s, n_s, |i, j| {
        l2_inner(&test_space.functions[i], &slave_hats[j + 1], length)
    });
    let c = DMatrix::from_fn(n_s, 2, |i, e| {
        let end = if e == 0 { 0 } else { ns_int };
        l2_inner(&test_space.functions[i], &slave_hats[end], length)
    });

    let s_lu = s.clone().lu();
    let singular = || Error::SingularMortarMass {
        interface: iface.id,
    };
    let from_mortar = s_lu.solve(&m).ok_or_else(singular)?;
    let from_ends = -s_lu.solve(&c).ok_or_else(singular)?;

    Ok(MortarCoupling {
        interface: iface.id,
        mortar: pair.mortar,
        nonmortar: pair.nonmortar,
        length,
        mortar_nodes,
        nonmortar_nodes,
        test_space,
        m,
        s,
        c,
        s_lu,
        from_mortar,
        from_ends,
    })
}

pub fn assemble_couplings(
    partition: &CoarsePartition,
    meshes: &[SubdomainMesh],
    sides: &InterfaceSideAssignment,
) -> Result<Vec<MortarCoupling>> {
    partition
        .interfaces
        .iter()
        .zip(&sides.pairs)
        .map(|(iface, pair)| assemble_coupling(iface, pair, meshes))
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DofKind {
    /// Cross point of the coarse partition.
    Corner(usize),
    /// Interior node `index` (1-based along the edge) of the mortar side of an interface.
    Mortar { interface: usize, index: usize },
    Interior { subdomain: SubdomainId, node: usize },
}

/// Role of a broken-space node in the constrained system.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BrokenRole {
    Free(usize),
    /// Interior slave node `row` (0-based) of an interface.
    Slave { interface: usize, row: usize },
}

/// Free unknowns ordered corners, then mortar nodes, then interior nodes by
/// subdomain, plus the prolongation `T` from free to broken vectors.
#[derive(Clone, Debug)]
pub struct FreeDofMap {
    pub n_corner: usize,
    pub n_mortar: usize,
    pub n_interior: usize,
    pub kinds: Vec<DofKind>,
    pub interior_ranges: Vec<Range<usize>>,
    /// Per broken-space node.
    pub roles: Vec<BrokenRole>,
    /// Free dof of each mortar trace node `m_0 … m_{n_m+1}`; `None` on the outer boundary.
    pub mortar_trace: Vec<Vec<Option<usize>>>,
    /// Broken indices of the mortar and nonmortar trace nodes of each interface.
    pub mortar_broken: Vec<Vec<Option<usize>>>,
    pub nonmortar_broken: Vec<Vec<Option<usize>>>,
    pub prolongation: SparseMatrix,
}

impl FreeDofMap {
    pub fn dim(&self) -> usize {
        self.kinds.len()
    }

    pub fn corner_range(&self) -> Range<usize> {
        0..self.n_corner
    }

    pub fn mortar_range(&self) -> Range<usize> {
        self.n_corner..self.n_corner + self.n_mortar
    }

    pub fn interior_range(&self) -> Range<usize> {
        self.n_corner + self.n_mortar..self.dim()
    }

    /// Number of corner and mortar dofs, the size of the unenriched coarse space.
    pub fn n_skeleton(&self) -> usize {
        self.n_corner + self.n_mortar
    }

    /// Broken-space vector `T u`.
    pub fn extend(&self, u: &DVector<f64>) -> DVector<f64> {
        self.prolongation.mul_vec(u)
    }
}

/// Constrained stiffness `Tᵀ A T` and load `Tᵀ f` on the free dofs.
#[derive(Clone, Debug)]
pub struct ConstrainedSystem {
    pub dofs: FreeDofMap,
    pub stiffness: SparseMatrix,
    pub load: DVector<f64>,
}

pub fn build_constrained_system(
    partition: &CoarsePartition,
    meshes: &[SubdomainMesh],
    sides: &InterfaceSideAssignment,
    broken: &BrokenSystem,
    couplings: &[MortarCoupling],
) -> Result<ConstrainedSystem> {
    if couplings.len() != partition.interfaces.len() {
        return Err(Error::DofClassification(format!(
            "{} couplings for {} interfaces",
            couplings.len(),
            partition.interfaces.len()
        )));
    }
    let space = &broken.space;
    let n_corner = partition.cross_points.len();

    let mut mortar_offset = Vec::with_capacity(couplings.len());
    let mut n_mortar = 0;
    for c in couplings {
        mortar_offset.push(n_corner + n_mortar);
        n_mortar += c.n_mortar();
    }

    let mut kinds: Vec<DofKind> = (0..n_corner).map(DofKind::Corner).collect();
    for c in couplings {
        kinds.extend((1..=c.n_mortar()).map(|index| DofKind::Mortar {
            interface: c.interface,
            index,
        }));
    }
    let mut interior_ranges = Vec::with_capacity(meshes.len());
    let mut interior_dof = vec![Vec::new(); meshes.len()];
    for mesh in meshes {
        let start = kinds.len();
        let mut map = vec![usize::MAX; mesh.n_nodes()];
        for &v in &mesh.interior {
            map[v] = kinds.len();
            kinds.push(DofKind::Interior {
                subdomain: mesh.subdomain,
                node: v,
            });
        }
        interior_dof[mesh.subdomain] = map;
        interior_ranges.push(start..kinds.len());
    }
    let n_free = kinds.len();
    let n_interior = n_free - n_corner - n_mortar;

    let end_dofs = |iface: &Interface| {
        [
            partition.cross_point_at(iface.start_vertex),
            partition.cross_point_at(iface.end_vertex),
        ]
    };
    let mortar_trace: Vec<Vec<Option<usize>>> = couplings
        .iter()
        .map(|c| {
            let [start, end] = end_dofs(&partition.interfaces[c.interface]);
            let mut trace = vec![start];
            trace.extend((0..c.n_mortar()).map(|k| Some(mortar_offset[c.interface] + k)));
            trace.push(end);
            trace
        })
        .collect();

    let mut roles = Vec::with_capacity(space.dim());
    let mut entries = Vec::new();
    for (row, &(sub_id, v)) in space.owner.iter().enumerate() {
        let mesh = &meshes[sub_id];
        let sub = &partition.subdomains[sub_id];
        let role = match mesh.kinds[v] {
            NodeKind::Interior => BrokenRole::Free(interior_dof[sub_id][v]),
            NodeKind::Corner(corner) => {
                let cp = partition.cross_point_at(sub.corner_vertex(corner)).ok_or_else(|| {
                    Error::DofClassification(format!(
                        "boundary corner {v} of subdomain {sub_id} is indexed"
                    ))
                })?;
                BrokenRole::Free(cp)
            }
            NodeKind::Edge(side) => {
                let SideKind::Interface(iface) = sub.side(side) else {
                    return Err(Error::DofClassification(format!(
                        "Dirichlet node {v} of subdomain {sub_id} is indexed"
                    )));
                };
                let n = mesh.n_cells + 1;
                let k = match side {
                    crate::geometry::Side::South | crate::geometry::Side::North => v % n,
                    crate::geometry::Side::East | crate::geometry::Side::West => v / n,
                };
                if sides.is_mortar(iface, sub_id) {
                    BrokenRole::Free(mortar_offset[iface] + k - 1)
                } else {
                    BrokenRole::Slave {
                        interface: iface,
                        row: k - 1,
                    }
                }
            }
        };
        match role {
            BrokenRole::Free(j) => entries.push((row, j, 1.0)),
            BrokenRole::Slave { interface, row: r } => {
                let c = &couplings[interface];
                let trace = &mortar_trace[interface];
                for (j, dof) in trace.iter().enumerate() {
                    if let Some(dof) = dof {
                        entries.push((row, *dof, c.from_mortar[(r, j)]));
                    }
                }
                // slave end nodes are the same cross points as the mortar ends
                let ends = [trace[0], *trace.last().unwrap()];
                for (e, dof) in ends.iter().enumerate() {
                    if let Some(dof) = dof {
                        entries.push((row, *dof, c.from_ends[(r, e)]));
                    }
                }
            }
        }
        roles.push(role);
    }

    let mut hit = vec![false; n_free];
    for role in &roles {
        if let BrokenRole::Free(j) = role {
            hit[*j] = true;
        }
    }
    if let Some(j) = hit.iter().position(|h| !h) {
        return Err(Error::DofClassification(format!(
            "free dof {j} ({:?}) has no broken-space node",
            kinds[j]
        )));
    }

    let trace_broken = |sub: SubdomainId, nodes: &[usize]| -> Vec<Option<usize>> {
        nodes.iter().map(|&v| space.global(sub, v)).collect()
    };
    let mortar_broken = couplings
        .iter()
        .map(|c| trace_broken(c.mortar, &c.mortar_nodes))
        .collect();
    let nonmortar_broken = couplings
        .iter()
        .map(|c| trace_broken(c.nonmortar, &c.nonmortar_nodes))
        .collect();

    let t = SparseMatrix::from_triplets(space.dim(), n_free, entries);
    let t_tr = t.transpose();
    let stiffness = t_tr.matmul(&broken.stiffness.matmul(&t));
    let load = t_tr.mul_vec(&broken.load);

    Ok(ConstrainedSystem {
        dofs: FreeDofMap {
            n_corner,
            n_mortar,
            n_interior,
            kinds,
            interior_ranges,
            roles,
            mortar_trace,
            mortar_broken,
            nonmortar_broken,
            prolongation: t,
        },
        stiffness,
        load,
    })
}

/// `∫ (u_mortar − u_slave) ψ` for every test function of every interface,
/// integrated directly from the extended traces of a free-dof vector.
pub fn mortar_residuals(
    couplings: &[MortarCoupling],
    dofs: &FreeDofMap,
    u: &DVector<f64>,
) -> Vec<Vec<f64>> {
    let broken = dofs.extend(u);
    let trace = |idx: &[Option<usize>]| {
        PiecewiseLinear::uniform(idx.iter().map(|i| i.map_or(0.0, |i| broken[i])).collect())
    };
    couplings
        .iter()
        .map(|c| {
            let um = trace(&dofs.mortar_broken[c.interface]);
            let us = trace(&dofs.nonmortar_broken[c.interface]);
            c.test_space
                .functions
                .iter()
                .map(|psi| l2_inner(&um, psi, c.length) - l2_inner(&us, psi, c.length))
                .collect()
        })
        .collect()
}
