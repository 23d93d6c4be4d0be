use super::{CellKind, Mesh};
use crate::{NormError, Result};

/// Unit square split into `n x n` squares, each cut into two right
/// triangles along the (i,j)-(i+1,j+1) diagonal. Vertex `j*(n+1)+i` sits at
/// `(i/n, j/n)`.
pub fn unit_square_grid(n: usize) -> Result<Mesh> {
    grid_with_holes(n, |_, _| false)
}

/// Unit square with an interior slit one element wide, running along
/// `x = 0.4` from `y = 0.3` to `y = 0.7` (snapped to grid lines).
pub fn notch_square(n: usize) -> Result<Mesh> {
    if n < 5 {
        return Err(NormError::InvalidConfig(format!(
            "notch mesh needs at least 5 cells per side, got {n}"
        )));
    }
    let snap = |t: f64| (t * n as f64).round() as usize;
    let (i0, j0, j1) = (snap(0.4), snap(0.3), snap(0.7));
    grid_with_holes(n, |i, j| i == i0 && j >= j0 && j < j1)
}

fn grid_with_holes(n: usize, removed: impl Fn(usize, usize) -> bool) -> Result<Mesh> {
    if n == 0 {
        return Err(NormError::InvalidConfig("grid needs n >= 1".into()));
    }
    let h = 1.0 / n as f64;
    let mut vertices = Vec::with_capacity((n + 1) * (n + 1));
    for j in 0..=n {
        for i in 0..=n {
            vertices.push([i as f64 * h, j as f64 * h, 0.0]);
        }
    }
    let id = |i: usize, j: usize| j * (n + 1) + i;
    let mut cells = Vec::with_capacity(6 * n * n);
    for j in 0..n {
        for i in 0..n {
            if removed(i, j) {
                continue;
            }
            let (v00, v10, v11, v01) = (id(i, j), id(i + 1, j), id(i + 1, j + 1), id(i, j + 1));
            cells.extend_from_slice(&[v00, v10, v11, v00, v11, v01]);
        }
    }
    Mesh::new(2, CellKind::Triangle, vertices, cells)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_counts() {
        let m = unit_square_grid(16).unwrap();
        assert_eq!(m.n_vertices(), 17 * 17);
        assert_eq!(m.n_cells(), 2 * 16 * 16);
        assert!((m.total_measure() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn notch_removes_a_strip() {
        let m = notch_square(40).unwrap();
        assert_eq!(m.n_vertices(), 41 * 41);
        assert_eq!(m.n_cells(), 2 * 40 * 40 - 2 * 16);
        let h = 1.0 / 40.0;
        assert!((m.total_measure() - (1.0 - 16.0 * h * h)).abs() < 1e-12);
        // slit rim nodes are on the boundary
        let b = m.boundary_vertices();
        let rim = b
            .iter()
            .filter(|&&v| {
                let p = m.vertices()[v];
                p[0] > 0.0 && p[0] < 1.0 && p[1] > 0.0 && p[1] < 1.0
            })
            .count();
        assert_eq!(rim, 2 * 17);
    }
}
