use super::{cross, dot, norm, sub, CellKind, Mesh, MIN_TET_VOLUME, MIN_TRIANGLE_AREA};
use crate::field::Field;
use crate::sparse::SparseSymMatrix;
use crate::{NormError, Result};

/// Cotangent element matrix of one triangle (positive semi-definite sign).
pub(crate) fn triangle_stiffness(p: [[f64; 3]; 3], cell: usize) -> Result<[[f64; 3]; 3]> {
    let area2 = norm(cross(sub(p[1], p[0]), sub(p[2], p[0])));
    if !(0.5 * area2 >= MIN_TRIANGLE_AREA) {
        return Err(NormError::DegenerateCell {
            cell,
            measure: 0.5 * area2,
        });
    }
    let mut k = [[0.0; 3]; 3];
    for corner in 0..3 {
        let (i, j) = ((corner + 1) % 3, (corner + 2) % 3);
        let e1 = sub(p[i], p[corner]);
        let e2 = sub(p[j], p[corner]);
        // cot of the angle at `corner`, which is opposite edge (i, j)
        let cot = dot(e1, e2) / area2;
        let w = -0.5 * cot;
        k[i][j] += w;
        k[j][i] += w;
        k[i][i] -= w;
        k[j][j] -= w;
    }
    Ok(k)
}

/// Linear (P1) element stiffness of a tetrahedron: `vol * grad(l_i) . grad(l_j)`.
pub(crate) fn tet_stiffness(p: [[f64; 3]; 4], cell: usize) -> Result<[[f64; 4]; 4]> {
    let a = sub(p[1], p[0]);
    let b = sub(p[2], p[0]);
    let c = sub(p[3], p[0]);
    let det = dot(a, cross(b, c));
    let vol = det.abs() / 6.0;
    if !(vol >= MIN_TET_VOLUME) {
        return Err(NormError::DegenerateCell { cell, measure: vol });
    }
    // rows of the inverse Jacobian are the barycentric gradients of vertices 1..3
    let g1 = cross(b, c).map(|x| x / det);
    let g2 = cross(c, a).map(|x| x / det);
    let g3 = cross(a, b).map(|x| x / det);
    let g0 = [-(g1[0] + g2[0] + g3[0]), -(g1[1] + g2[1] + g3[1]), -(g1[2] + g2[2] + g3[2])];
    let g = [g0, g1, g2, g3];
    let mut k = [[0.0; 4]; 4];
    for i in 0..4 {
        for j in 0..4 {
            k[i][j] = vol * dot(g[i], g[j]);
        }
    }
    Ok(k)
}

/// Stiffness with a per-cell scalar weight (1 for the pure Laplacian).
pub(crate) fn weighted_stiffness(mesh: &Mesh, weight: impl Fn(usize) -> f64) -> Result<SparseSymMatrix> {
    let k = mesh.kind().nodes_per_cell();
    let mut trips = Vec::with_capacity(mesh.n_cells() * k * k);
    let verts = mesh.vertices();
    for c in 0..mesh.n_cells() {
        let v = mesh.cell(c);
        let w = weight(c);
        match mesh.kind() {
            CellKind::Triangle => {
                let ke = triangle_stiffness([verts[v[0]], verts[v[1]], verts[v[2]]], c)?;
                for a in 0..3 {
                    for b in 0..3 {
                        trips.push((v[a], v[b], w * ke[a][b]));
                    }
                }
            }
            CellKind::Tetrahedron => {
                let ke = tet_stiffness([verts[v[0]], verts[v[1]], verts[v[2]], verts[v[3]]], c)?;
                for a in 0..4 {
                    for b in 0..4 {
                        trips.push((v[a], v[b], w * ke[a][b]));
                    }
                }
            }
        }
    }
    Ok(SparseSymMatrix::from_triplets(mesh.n_vertices(), trips))
}

/// Cotangent Laplacian (triangles) or P1 stiffness (tetrahedra), assembled
/// positive semi-definite with natural boundary conditions.
pub fn cotangent_stiffness(mesh: &Mesh) -> Result<SparseSymMatrix> {
    weighted_stiffness(mesh, |_| 1.0)
}

/// Lumped (diagonal) mass: each vertex receives `measure / nodes_per_cell`
/// from every incident cell.
pub fn lumped_mass(mesh: &Mesh) -> Result<SparseSymMatrix> {
    let k = mesh.kind().nodes_per_cell();
    let min = match mesh.kind() {
        CellKind::Triangle => MIN_TRIANGLE_AREA,
        CellKind::Tetrahedron => MIN_TET_VOLUME,
    };
    let mut diag = vec![0.0; mesh.n_vertices()];
    for c in 0..mesh.n_cells() {
        let m = mesh.cell_measure(c);
        if !(m >= min) {
            return Err(NormError::DegenerateCell { cell: c, measure: m });
        }
        for &i in mesh.cell(c) {
            diag[i] += m / k as f64;
        }
    }
    if let Some(i) = diag.iter().position(|&d| d <= 0.0) {
        return Err(NormError::DegenerateCell {
            cell: usize::MAX,
            measure: diag[i],
        });
    }
    Ok(SparseSymMatrix::from_diagonal(&diag))
}

/// `fᵀ S f` for every channel of `f`.
pub fn dirichlet_energy(s: &SparseSymMatrix, f: &Field) -> Result<Vec<f64>> {
    if s.dim() != f.n_nodes() {
        return Err(NormError::DimensionMismatch(format!(
            "operator has dimension {}, field has {} nodes",
            s.dim(),
            f.n_nodes()
        )));
    }
    Ok((0..f.channels()).map(|c| s.quad_form(&f.channel(c))).collect())
}
