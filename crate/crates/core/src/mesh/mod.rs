//! Triangle and tetrahedral meshes: loading, validation, refinement and the
//! finite-element operators used to discretise the Laplace-Beltrami operator.

pub(crate) mod fem;
mod generate;
mod io;
mod vtk;

use std::collections::HashMap;

pub use fem::{cotangent_stiffness, dirichlet_energy, lumped_mass};
pub use generate::{notch_square, unit_square_grid};
pub use io::{load_mesh, read_mshjson, save_mesh, write_mshjson, write_obj, write_off, MeshFormat};
pub use vtk::{write_vtk, write_vtk_file};

use crate::field::{DomainId, Field};
use crate::{NormError, Result};

/// Minimum admissible triangle area.
pub const MIN_TRIANGLE_AREA: f64 = 1e-12;
/// Minimum admissible tetrahedron volume.
pub const MIN_TET_VOLUME: f64 = 1e-14;
const DUPLICATE_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CellKind {
    Triangle,
    Tetrahedron,
}

impl CellKind {
    pub fn nodes_per_cell(self) -> usize {
        match self {
            CellKind::Triangle => 3,
            CellKind::Tetrahedron => 4,
        }
    }

    /// VTK legacy cell type id.
    pub fn vtk_type(self) -> u8 {
        match self {
            CellKind::Triangle => 5,
            CellKind::Tetrahedron => 10,
        }
    }
}

/// A conforming simplicial mesh. Vertices are stored with three coordinates;
/// planar meshes have `dim == 2` and `z == 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct Mesh {
    dim: usize,
    kind: CellKind,
    vertices: Vec<[f64; 3]>,
    cells: Vec<usize>,
}

impl Mesh {
    /// Builds a mesh and checks index range and cell measures.
    pub fn new(dim: usize, kind: CellKind, vertices: Vec<[f64; 3]>, cells: Vec<usize>) -> Result<Self> {
        if dim != 2 && dim != 3 {
            return Err(NormError::Parse(format!("mesh dimension must be 2 or 3, got {dim}")));
        }
        if kind == CellKind::Tetrahedron && dim != 3 {
            return Err(NormError::Parse("tetrahedral meshes must be 3-dimensional".into()));
        }
        let k = kind.nodes_per_cell();
        if cells.len() % k != 0 {
            return Err(NormError::Parse(format!(
                "cell index list length {} is not a multiple of {k}",
                cells.len()
            )));
        }
        let mesh = Mesh {
            dim,
            kind,
            vertices,
            cells,
        };
        mesh.validate()?;
        Ok(mesh)
    }

    fn validate(&self) -> Result<()> {
        let n = self.vertices.len();
        for c in 0..self.n_cells() {
            for &i in self.cell(c) {
                if i >= n {
                    return Err(NormError::IndexOutOfRange {
                        cell: c,
                        index: i,
                        n_vertices: n,
                    });
                }
            }
        }
        let min = match self.kind {
            CellKind::Triangle => MIN_TRIANGLE_AREA,
            CellKind::Tetrahedron => MIN_TET_VOLUME,
        };
        for c in 0..self.n_cells() {
            let m = self.cell_measure(c);
            if !(m >= min) {
                return Err(NormError::DegenerateCell { cell: c, measure: m });
            }
        }
        if let Some((a, b)) = self.find_duplicate_vertices() {
            log::warn!("vertices {a} and {b} coincide within {DUPLICATE_TOL:e}");
        }
        Ok(())
    }

    fn find_duplicate_vertices(&self) -> Option<(usize, usize)> {
        let mut order: Vec<usize> = (0..self.vertices.len()).collect();
        order.sort_by(|&a, &b| {
            let (p, q) = (self.vertices[a], self.vertices[b]);
            p[0].total_cmp(&q[0])
                .then(p[1].total_cmp(&q[1]))
                .then(p[2].total_cmp(&q[2]))
        });
        order.windows(2).find_map(|w| {
            let (p, q) = (self.vertices[w[0]], self.vertices[w[1]]);
            let close = (0..3).all(|d| (p[d] - q[d]).abs() <= DUPLICATE_TOL);
            close.then_some((w[0].min(w[1]), w[0].max(w[1])))
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn kind(&self) -> CellKind {
        self.kind
    }

    pub fn n_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn n_cells(&self) -> usize {
        self.cells.len() / self.kind.nodes_per_cell()
    }

    pub fn vertices(&self) -> &[[f64; 3]] {
        &self.vertices
    }

    pub fn cells(&self) -> &[usize] {
        &self.cells
    }

    pub fn cell(&self, c: usize) -> &[usize] {
        let k = self.kind.nodes_per_cell();
        &self.cells[c * k..(c + 1) * k]
    }

    /// Area of a triangle or volume of a tetrahedron.
    pub fn cell_measure(&self, c: usize) -> f64 {
        let v = self.cell(c);
        let p = |i: usize| self.vertices[v[i]];
        match self.kind {
            CellKind::Triangle => triangle_area(p(0), p(1), p(2)),
            CellKind::Tetrahedron => tet_volume(p(0), p(1), p(2), p(3)),
        }
    }

    pub fn total_measure(&self) -> f64 {
        (0..self.n_cells()).map(|c| self.cell_measure(c)).sum()
    }

    /// Content hash over dimension, cell kind, coordinates and connectivity.
    pub fn domain_id(&self) -> DomainId {
        let mut coords = Vec::with_capacity(self.vertices.len() * 24);
        for v in &self.vertices {
            for x in v {
                coords.extend_from_slice(&x.to_le_bytes());
            }
        }
        let mut conn = Vec::with_capacity(self.cells.len() * 8);
        for &i in &self.cells {
            conn.extend_from_slice(&(i as u64).to_le_bytes());
        }
        let kind: &[u8] = match self.kind {
            CellKind::Triangle => b"tri",
            CellKind::Tetrahedron => b"tet",
        };
        DomainId::hash_bytes(&[b"mesh", &[self.dim as u8], kind, &coords, &conn])
    }

    /// Edges as sorted vertex pairs in first-encounter order.
    pub fn edges(&self) -> Vec<[usize; 2]> {
        let mut seen: HashMap<[usize; 2], usize> = HashMap::new();
        let mut out = Vec::new();
        let k = self.kind.nodes_per_cell();
        for c in 0..self.n_cells() {
            let v = self.cell(c);
            for a in 0..k {
                for b in (a + 1)..k {
                    let e = sorted2(v[a], v[b]);
                    seen.entry(e).or_insert_with(|| {
                        out.push(e);
                        out.len() - 1
                    });
                }
            }
        }
        out
    }

    /// Vertices on the boundary (edges of exactly one triangle, or faces of
    /// exactly one tetrahedron), ascending.
    pub fn boundary_vertices(&self) -> Vec<usize> {
        let mut flag = vec![false; self.n_vertices()];
        match self.kind {
            CellKind::Triangle => {
                let mut count: HashMap<[usize; 2], u32> = HashMap::new();
                for c in 0..self.n_cells() {
                    let v = self.cell(c);
                    for (a, b) in [(0, 1), (1, 2), (2, 0)] {
                        *count.entry(sorted2(v[a], v[b])).or_default() += 1;
                    }
                }
                for (e, n) in count {
                    if n == 1 {
                        flag[e[0]] = true;
                        flag[e[1]] = true;
                    }
                }
            }
            CellKind::Tetrahedron => {
                let mut count: HashMap<[usize; 3], u32> = HashMap::new();
                for c in 0..self.n_cells() {
                    let v = self.cell(c);
                    for skip in 0..4 {
                        let mut f = [0usize; 3];
                        let mut k = 0;
                        for (i, &vi) in v.iter().enumerate() {
                            if i != skip {
                                f[k] = vi;
                                k += 1;
                            }
                        }
                        f.sort_unstable();
                        *count.entry(f).or_default() += 1;
                    }
                }
                for (f, n) in count {
                    if n == 1 {
                        for i in f {
                            flag[i] = true;
                        }
                    }
                }
            }
        }
        (0..self.n_vertices()).filter(|&i| flag[i]).collect()
    }

    /// Axis-aligned bounding box `(min, max)`.
    pub fn bounding_box(&self) -> ([f64; 3], [f64; 3]) {
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for v in &self.vertices {
            for d in 0..3 {
                lo[d] = lo[d].min(v[d]);
                hi[d] = hi[d].max(v[d]);
            }
        }
        (lo, hi)
    }

    /// Splits every triangle into four through its edge midpoints.
    pub fn refine(&self) -> Result<Mesh> {
        Ok(self.refine_with_parents()?.0)
    }

    /// Like [`Mesh::refine`], also returning the parent edge of every new
    /// vertex (new vertex `n_old + k` is the midpoint of `parents[k]`).
    pub fn refine_with_parents(&self) -> Result<(Mesh, Vec<[usize; 2]>)> {
        if self.kind != CellKind::Triangle {
            return Err(NormError::UnsupportedCellKind(
                "refinement is only implemented for triangle meshes".into(),
            ));
        }
        let n0 = self.n_vertices();
        let mut midpoint: HashMap<[usize; 2], usize> = HashMap::new();
        let mut parents = Vec::new();
        let mut vertices = self.vertices.clone();
        let mut cells = Vec::with_capacity(self.cells.len() * 4);
        let mut mid = |a: usize, b: usize, vertices: &mut Vec<[f64; 3]>| -> usize {
            let e = sorted2(a, b);
            *midpoint.entry(e).or_insert_with(|| {
                let (p, q) = (vertices[a], vertices[b]);
                vertices.push([
                    0.5 * (p[0] + q[0]),
                    0.5 * (p[1] + q[1]),
                    0.5 * (p[2] + q[2]),
                ]);
                parents.push(e);
                n0 + parents.len() - 1
            })
        };
        for c in 0..self.n_cells() {
            let v = self.cell(c);
            let (a, b, cc) = (v[0], v[1], v[2]);
            let ab = mid(a, b, &mut vertices);
            let bc = mid(b, cc, &mut vertices);
            let ca = mid(cc, a, &mut vertices);
            cells.extend_from_slice(&[a, ab, ca, ab, b, bc, ca, bc, cc, ab, bc, ca]);
        }
        let mesh = Mesh::new(self.dim, self.kind, vertices, cells)?;
        Ok((mesh, parents))
    }
}

/// Linear interpolation of a nodal field onto `coarse.refine()`.
pub fn prolongate(coarse: &Mesh, field: &Field) -> Result<(Mesh, Field)> {
    if field.n_nodes() != coarse.n_vertices() {
        return Err(NormError::DimensionMismatch(format!(
            "field has {} nodes, mesh has {}",
            field.n_nodes(),
            coarse.n_vertices()
        )));
    }
    let (fine, parents) = coarse.refine_with_parents()?;
    let ch = field.channels();
    let mut values = field.values().to_vec();
    for [a, b] in &parents {
        for c in 0..ch {
            values.push(0.5 * (field.get(*a, c) + field.get(*b, c)));
        }
    }
    let out = Field::new(fine.n_vertices(), ch, values, fine.domain_id())?;
    Ok((fine, out))
}

pub(crate) fn sorted2(a: usize, b: usize) -> [usize; 2] {
    if a < b {
        [a, b]
    } else {
        [b, a]
    }
}

pub(crate) fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub(crate) fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub(crate) fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

pub(crate) fn norm(a: [f64; 3]) -> f64 {
    dot(a, a).sqrt()
}

pub(crate) fn triangle_area(p0: [f64; 3], p1: [f64; 3], p2: [f64; 3]) -> f64 {
    0.5 * norm(cross(sub(p1, p0), sub(p2, p0)))
}

pub(crate) fn tet_volume(p0: [f64; 3], p1: [f64; 3], p2: [f64; 3], p3: [f64; 3]) -> f64 {
    dot(sub(p1, p0), cross(sub(p2, p0), sub(p3, p0))).abs() / 6.0
}
