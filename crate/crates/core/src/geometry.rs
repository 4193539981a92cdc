//! Coarse partition of the unit square and per-subdomain structured P1 meshes.
//!
//! Subdomains are the cells of a uniform `nx × ny` grid, numbered row by row
//! from the lower-left corner. Every subdomain carries its own triangulation
//! with an independent number of cells per axis, so neighbouring meshes do not
//! have to match along the shared edge.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type SubdomainId = usize;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Rect {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl Rect {
    pub fn width(&self) -> f64 {
        self.x1 - self.x0
    }

    pub fn height(&self) -> f64 {
        self.y1 - self.y0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Side {
    South,
    East,
    North,
    West,
}

impl Side {
    pub const ALL: [Side; 4] = [Side::South, Side::East, Side::North, Side::West];

    pub fn index(self) -> usize {
        match self {
            Side::South => 0,
            Side::East => 1,
            Side::North => 2,
            Side::West => 3,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Corner {
    SouthWest,
    SouthEast,
    NorthEast,
    NorthWest,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Orientation {
    /// Shared edge is vertical: the interface separates a left and a right subdomain.
    Vertical,
    /// Shared edge is horizontal: the interface separates a lower and an upper subdomain.
    Horizontal,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SideKind {
    Boundary,
    Interface(usize),
}

#[derive(Clone, Debug)]
pub struct Subdomain {
    pub id: SubdomainId,
    pub ix: usize,
    pub iy: usize,
    pub rect: Rect,
    /// Indexed by [`Side::index`].
    pub sides: [SideKind; 4],
}

impl Subdomain {
    pub fn side(&self, side: Side) -> SideKind {
        self.sides[side.index()]
    }

    /// Partition vertex `(vx, vy)` at the given corner.
    pub fn corner_vertex(&self, corner: Corner) -> (usize, usize) {
        match corner {
            Corner::SouthWest => (self.ix, self.iy),
            Corner::SouthEast => (self.ix + 1, self.iy),
            Corner::NorthEast => (self.ix + 1, self.iy + 1),
            Corner::NorthWest => (self.ix, self.iy + 1),
        }
    }
}

/// A whole edge shared by two adjacent subdomains.
#[derive(Clone, Debug)]
pub struct Interface {
    pub id: usize,
    /// Left (vertical interface) or lower (horizontal interface) subdomain.
    pub first: SubdomainId,
    /// Right or upper subdomain.
    pub second: SubdomainId,
    pub orientation: Orientation,
    /// Partition vertex at the start of the edge (smaller coordinate).
    pub start_vertex: (usize, usize),
    pub end_vertex: (usize, usize),
}

impl Interface {
    pub fn side_of(&self, subdomain: SubdomainId) -> Option<Side> {
        match self.orientation {
            Orientation::Vertical if subdomain == self.first => Some(Side::East),
            Orientation::Vertical if subdomain == self.second => Some(Side::West),
            Orientation::Horizontal if subdomain == self.first => Some(Side::North),
            Orientation::Horizontal if subdomain == self.second => Some(Side::South),
            _ => None,
        }
    }

    pub fn other(&self, subdomain: SubdomainId) -> SubdomainId {
        if subdomain == self.first {
            self.second
        } else {
            self.first
        }
    }
}

#[derive(Clone, Debug)]
pub struct CrossPoint {
    pub id: usize,
    pub vertex: (usize, usize),
    pub coords: [f64; 2],
}

/// Geometrically conforming partition of `[0,1]²` into `nx × ny` rectangles.
#[derive(Clone, Debug)]
pub struct CoarsePartition {
    pub nx: usize,
    pub ny: usize,
    pub subdomains: Vec<Subdomain>,
    pub interfaces: Vec<Interface>,
    pub cross_points: Vec<CrossPoint>,
}

impl CoarsePartition {
    /// Coarse mesh size: the longest subdomain edge.
    pub fn coarse_size(&self) -> f64 {
        (1.0 / self.nx as f64).max(1.0 / self.ny as f64)
    }

    pub fn len(&self) -> usize {
        self.subdomains.len()
    }

    pub fn is_empty(&self) -> bool {
        self.subdomains.is_empty()
    }

    pub fn vertex_coords(&self, (vx, vy): (usize, usize)) -> [f64; 2] {
        [grid_coord(vx, self.nx), grid_coord(vy, self.ny)]
    }

    pub fn is_boundary_vertex(&self, (vx, vy): (usize, usize)) -> bool {
        vx == 0 || vy == 0 || vx == self.nx || vy == self.ny
    }

    /// Cross point index of an interior partition vertex.
    pub fn cross_point_at(&self, vertex: (usize, usize)) -> Option<usize> {
        if self.is_boundary_vertex(vertex) {
            return None;
        }
        let (vx, vy) = vertex;
        Some((vy - 1) * (self.nx - 1) + (vx - 1))
    }

    pub fn subdomain_at(&self, ix: usize, iy: usize) -> SubdomainId {
        iy * self.nx + ix
    }
}

fn grid_coord(k: usize, n: usize) -> f64 {
    k as f64 / n as f64
}

pub fn build_partition(nx: usize, ny: usize) -> Result<CoarsePartition> {
    if nx == 0 || ny == 0 {
        return Err(Error::InvalidArgument(format!(
            "subdomain counts must be positive, got {nx}×{ny}"
        )));
    }

    let mut subdomains: Vec<Subdomain> = (0..ny)
        .flat_map(|iy| (0..nx).map(move |ix| (ix, iy)))
        .enumerate()
        .map(|(id, (ix, iy))| Subdomain {
            id,
            ix,
            iy,
            rect: Rect {
                x0: grid_coord(ix, nx),
                y0: grid_coord(iy, ny),
                x1: grid_coord(ix + 1, nx),
                y1: grid_coord(iy + 1, ny),
            },
            sides: [SideKind::Boundary; 4],
        })
        .collect();

    let mut interfaces = Vec::with_capacity(nx * (ny - 1) + ny * (nx - 1));
    for iy in 0..ny {
        for ix in 0..nx {
            let id = iy * nx + ix;
            if ix + 1 < nx {
                let other = id + 1;
                let iface = interfaces.len();
                interfaces.push(Interface {
                    id: iface,
                    first: id,
                    second: other,
                    orientation: Orientation::Vertical,
                    start_vertex: (ix + 1, iy),
                    end_vertex: (ix + 1, iy + 1),
                });
                subdomains[id].sides[Side::East.index()] = SideKind::Interface(iface);
                subdomains[other].sides[Side::West.index()] = SideKind::Interface(iface);
            }
            if iy + 1 < ny {
                let other = id + nx;
                let iface = interfaces.len();
                interfaces.push(Interface {
                    id: iface,
                    first: id,
                    second: other,
                    orientation: Orientation::Horizontal,
                    start_vertex: (ix, iy + 1),
                    end_vertex: (ix + 1, iy + 1),
                });
                subdomains[id].sides[Side::North.index()] = SideKind::Interface(iface);
                subdomains[other].sides[Side::South.index()] = SideKind::Interface(iface);
            }
        }
    }

    let cross_points = (1..ny)
        .flat_map(|vy| (1..nx).map(move |vx| (vx, vy)))
        .enumerate()
        .map(|(id, vertex)| CrossPoint {
            id,
            vertex,
            coords: [grid_coord(vertex.0, nx), grid_coord(vertex.1, ny)],
        })
        .collect();

    Ok(CoarsePartition {
        nx,
        ny,
        subdomains,
        interfaces,
        cross_points,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NodeKind {
    Interior,
    /// Strictly inside an edge of the subdomain.
    Edge(Side),
    Corner(Corner),
}

/// Structured triangulation of one rectangular subdomain.
///
/// Node `(c, r)` has index `r * (n_cells + 1) + c`. Each cell is split along
/// the diagonal from its lower-left to its upper-right corner.
#[derive(Clone, Debug)]
pub struct SubdomainMesh {
    pub subdomain: SubdomainId,
    pub n_cells: usize,
    pub rect: Rect,
    pub coords: Vec<[f64; 2]>,
    pub triangles: Vec<[usize; 3]>,
    pub kinds: Vec<NodeKind>,
    /// Interior nodes in increasing index order.
    pub interior: Vec<usize>,
    /// Triangles with at least one vertex on the subdomain boundary.
    pub boundary_layer: Vec<usize>,
    pub in_layer: Vec<bool>,
}

impl SubdomainMesh {
    pub fn node(&self, c: usize, r: usize) -> usize {
        r * (self.n_cells + 1) + c
    }

    pub fn n_nodes(&self) -> usize {
        self.coords.len()
    }

    /// Fine mesh size along x (cells are square when the subdomain is).
    pub fn h(&self) -> f64 {
        self.rect.width() / self.n_cells as f64
    }

    /// Nodes of one edge, corners included, ordered by increasing coordinate.
    pub fn edge_nodes(&self, side: Side) -> Vec<usize> {
        let n = self.n_cells;
        (0..=n)
            .map(|k| match side {
                Side::South => self.node(k, 0),
                Side::North => self.node(k, n),
                Side::West => self.node(0, k),
                Side::East => self.node(n, k),
            })
            .collect()
    }

    pub fn corner_node(&self, corner: Corner) -> usize {
        let n = self.n_cells;
        match corner {
            Corner::SouthWest => self.node(0, 0),
            Corner::SouthEast => self.node(n, 0),
            Corner::NorthEast => self.node(n, n),
            Corner::NorthWest => self.node(0, n),
        }
    }

    pub fn triangle_area(&self, t: usize) -> f64 {
        let [a, b, c] = self.triangles[t].map(|v| self.coords[v]);
        0.5 * ((b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]))
    }

    pub fn barycenter(&self, t: usize) -> [f64; 2] {
        let [a, b, c] = self.triangles[t].map(|v| self.coords[v]);
        [(a[0] + b[0] + c[0]) / 3.0, (a[1] + b[1] + c[1]) / 3.0]
    }
}

fn lerp(a: f64, b: f64, k: usize, n: usize) -> f64 {
    if k == 0 {
        a
    } else if k == n {
        b
    } else {
        a + (b - a) * (k as f64 / n as f64)
    }
}

pub fn build_subdomain_mesh(
    subdomain: SubdomainId,
    rect: Rect,
    n_cells: usize,
) -> Result<SubdomainMesh> {
    if n_cells < 2 {
        return Err(Error::TooFewCells(n_cells));
    }
    let n = n_cells;
    let side = n + 1;
    let mut coords = Vec::with_capacity(side * side);
    let mut kinds = Vec::with_capacity(side * side);
    for r in 0..=n {
        for c in 0..=n {
            coords.push([lerp(rect.x0, rect.x1, c, n), lerp(rect.y0, rect.y1, r, n)]);
            let kind = match (c, r) {
                (0, 0) => NodeKind::Corner(Corner::SouthWest),
                (c, 0) if c == n => NodeKind::Corner(Corner::SouthEast),
                (c, r) if c == n && r == n => NodeKind::Corner(Corner::NorthEast),
                (0, r) if r == n => NodeKind::Corner(Corner::NorthWest),
                (_, 0) => NodeKind::Edge(Side::South),
                (_, r) if r == n => NodeKind::Edge(Side::North),
                (0, _) => NodeKind::Edge(Side::West),
                (c, _) if c == n => NodeKind::Edge(Side::East),
                _ => NodeKind::Interior,
            };
            kinds.push(kind);
        }
    }

    let mut triangles = Vec::with_capacity(2 * n * n);
    for r in 0..n {
        for c in 0..n {
            let v00 = r * side + c;
            let v10 = v00 + 1;
            let v01 = v00 + side;
            let v11 = v01 + 1;
            triangles.push([v00, v10, v11]);
            triangles.push([v00, v11, v01]);
        }
    }

    let interior = (0..kinds.len())
        .filter(|&v| kinds[v] == NodeKind::Interior)
        .collect();
    let in_layer: Vec<bool> = triangles
        .iter()
        .map(|tri| tri.iter().any(|&v| kinds[v] != NodeKind::Interior))
        .collect();
    let boundary_layer = (0..triangles.len()).filter(|&t| in_layer[t]).collect();

    Ok(SubdomainMesh {
        subdomain,
        n_cells,
        rect,
        coords,
        triangles,
        kinds,
        interior,
        boundary_layer,
        in_layer,
    })
}

/// How many cells per axis each subdomain gets.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResolutionLayout {
    Uniform(usize),
    /// `even` cells on subdomains with even `ix + iy`, `odd` cells elsewhere.
    Checkerboard { even: usize, odd: usize },
}

impl ResolutionLayout {
    pub fn cells_for(&self, sub: &Subdomain) -> usize {
        match *self {
            ResolutionLayout::Uniform(n) => n,
            ResolutionLayout::Checkerboard { even, odd } => {
                if (sub.ix + sub.iy) % 2 == 0 {
                    even
                } else {
                    odd
                }
            }
        }
    }
}

pub fn build_meshes(
    partition: &CoarsePartition,
    layout: ResolutionLayout,
) -> Result<Vec<SubdomainMesh>> {
    partition
        .subdomains
        .par_iter()
        .map(|sub| build_subdomain_mesh(sub.id, sub.rect, layout.cells_for(sub)))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MortarPolicy {
    /// The side with fewer interface nodes is the mortar.
    Coarse,
    /// The side with more interface nodes is the mortar.
    Fine,
    /// Mortar subdomain listed per interface, in interface order.
    Explicit(Vec<SubdomainId>),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SidePair {
    pub interface: usize,
    pub mortar: SubdomainId,
    pub nonmortar: SubdomainId,
}

#[derive(Clone, Debug)]
pub struct InterfaceSideAssignment {
    pub policy: MortarPolicy,
    pub pairs: Vec<SidePair>,
}

impl InterfaceSideAssignment {
    pub fn is_mortar(&self, interface: usize, subdomain: SubdomainId) -> bool {
        self.pairs[interface].mortar == subdomain
    }
}

pub fn assign_sides(
    partition: &CoarsePartition,
    meshes: &[SubdomainMesh],
    policy: MortarPolicy,
) -> Result<InterfaceSideAssignment> {
    if meshes.len() != partition.len() {
        return Err(Error::InvalidArgument(format!(
            "{} meshes for {} subdomains",
            meshes.len(),
            partition.len()
        )));
    }
    if let MortarPolicy::Explicit(list) = &policy {
        if list.len() != partition.interfaces.len() {
            return Err(Error::InvalidArgument(format!(
                "explicit mortar list has {} entries for {} interfaces",
                list.len(),
                partition.interfaces.len()
            )));
        }
    }

    let pairs = partition
        .interfaces
        .iter()
        .map(|iface| {
            // first < second always, so `first` wins ties
            let (a, b) = (iface.first, iface.second);
            let (na, nb) = (meshes[a].n_cells, meshes[b].n_cells);
            let mortar = match &policy {
                MortarPolicy::Coarse => {
                    if nb < na {
                        b
                    } else {
                        a
                    }
                }
                MortarPolicy::Fine => {
                    if nb > na {
                        b
                    } else {
                        a
                    }
                }
                MortarPolicy::Explicit(list) => {
                    let m = list[iface.id];
                    if m != a && m != b {
                        return Err(Error::InvalidArgument(format!(
                            "subdomain {m} is not adjacent to interface {}",
                            iface.id
                        )));
                    }
                    m
                }
            };
            Ok(SidePair {
                interface: iface.id,
                mortar,
                nonmortar: iface.other(mortar),
            })
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(InterfaceSideAssignment { policy, pairs })
}
