use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::dataset::{Dataset, Provenance};
use super::grf::{grf_sample, threshold_coefficient, GrfSpec};
use crate::field::{DomainId, Field};
use crate::mesh::{fem::weighted_stiffness, Mesh};
use crate::sparse::EnvelopeCholesky;
use crate::spectral::SpectralBasis;
use crate::{NormError, Result};

/// Relative residual the reduced linear system must satisfy.
pub const SOLVE_TOL: f64 = 1e-10;

/// Dirichlet values on a set of nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct DirichletBc {
    pub nodes: Vec<usize>,
    pub values: Vec<f64>,
}

impl DirichletBc {
    pub fn new(nodes: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        if nodes.is_empty() {
            return Err(NormError::BoundaryNotFound("no Dirichlet nodes given".into()));
        }
        if nodes.len() != values.len() {
            return Err(NormError::DimensionMismatch(format!(
                "{} Dirichlet nodes but {} values",
                nodes.len(),
                values.len()
            )));
        }
        Ok(DirichletBc { nodes, values })
    }

    /// `g(x)` on every boundary vertex of `mesh`.
    pub fn from_fn(mesh: &Mesh, g: impl Fn([f64; 3]) -> f64) -> Result<Self> {
        let nodes = mesh.boundary_vertices();
        if nodes.is_empty() {
            return Err(NormError::BoundaryNotFound("mesh is closed".into()));
        }
        let values = nodes.iter().map(|&i| g(mesh.vertices()[i])).collect();
        Self::new(nodes, values)
    }

    /// `amplitude · sin(2π s)` on boundary vertices lying on the bounding
    /// box, where `s ∈ [0, 1)` is the counter-clockwise arclength fraction
    /// starting at the lower-left corner; zero on all other boundary
    /// vertices (the rim of interior notches).
    pub fn outer_sine(mesh: &Mesh, amplitude: f64) -> Result<Self> {
        let (lo, hi) = mesh.bounding_box();
        let (w, h) = (hi[0] - lo[0], hi[1] - lo[1]);
        let tol = 1e-9 * w.max(h);
        let perimeter = 2.0 * (w + h);
        let arclength = |p: [f64; 3]| -> Option<f64> {
            if (p[1] - lo[1]).abs() <= tol {
                Some(p[0] - lo[0])
            } else if (p[0] - hi[0]).abs() <= tol {
                Some(w + p[1] - lo[1])
            } else if (p[1] - hi[1]).abs() <= tol {
                Some(w + h + hi[0] - p[0])
            } else if (p[0] - lo[0]).abs() <= tol {
                Some(2.0 * w + h + hi[1] - p[1])
            } else {
                None
            }
        };
        Self::from_fn(mesh, |p| match arclength(p) {
            Some(s) => amplitude * (2.0 * std::f64::consts::PI * s / perimeter).sin(),
            None => 0.0,
        })
    }
}

/// P1 solution of `-∇·(a∇u) = f` with Dirichlet data `bc`. The element
/// coefficient is the mean of its vertex values of `a`; the load is lumped.
pub fn darcy_solve(mesh: &Mesh, a: &Field, f: f64, bc: &DirichletBc) -> Result<Field> {
    let n = mesh.n_vertices();
    if a.n_nodes() != n || a.channels() != 1 {
        return Err(NormError::DimensionMismatch(format!(
            "coefficient is {}x{}, mesh has {n} nodes",
            a.n_nodes(),
            a.channels()
        )));
    }
    if let Some((node, &value)) = a.values().iter().enumerate().find(|(_, v)| !(**v > 0.0) || !v.is_finite()) {
        return Err(NormError::NonPositiveCoefficient { node, value });
    }
    if bc.nodes.is_empty() {
        return Err(NormError::BoundaryNotFound("no Dirichlet nodes".into()));
    }
    let npc = mesh.kind().nodes_per_cell();
    let av = a.values();
    let k = weighted_stiffness(mesh, |c| mesh.cell(c).iter().map(|&i| av[i]).sum::<f64>() / npc as f64)?;
    let mut load = vec![0.0; n];
    for c in 0..mesh.n_cells() {
        let share = f * mesh.cell_measure(c) / npc as f64;
        for &i in mesh.cell(c) {
            load[i] += share;
        }
    }
    let mut u = vec![0.0; n];
    let mut fixed = vec![false; n];
    for (&i, &v) in bc.nodes.iter().zip(&bc.values) {
        if i >= n {
            return Err(NormError::BoundaryNotFound(format!("Dirichlet node {i} outside mesh of {n} nodes")));
        }
        fixed[i] = true;
        u[i] = v;
    }
    let free: Vec<usize> = (0..n).filter(|&i| !fixed[i]).collect();
    if !free.is_empty() {
        let mut rhs: Vec<f64> = free.iter().map(|&i| load[i]).collect();
        for (r, &i) in free.iter().enumerate() {
            for (j, kij) in k.row(i) {
                if fixed[j] {
                    rhs[r] -= kij * u[j];
                }
            }
        }
        let kff = k.submatrix(&free);
        let chol = EnvelopeCholesky::factor(&kff)?;
        let mut x = chol.solve(&rhs);
        let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
        let rhs_norm = norm(&rhs);
        let residual = |x: &[f64]| -> Vec<f64> {
            let kx = kff.matvec(x);
            rhs.iter().zip(kx).map(|(b, y)| b - y).collect()
        };
        let mut r = residual(&x);
        if norm(&r) > SOLVE_TOL * rhs_norm {
            let dx = chol.solve(&r);
            x.iter_mut().zip(dx).for_each(|(a, d)| *a += d);
            r = residual(&x);
        }
        if norm(&r) > SOLVE_TOL * rhs_norm {
            return Err(NormError::SingularSystem(format!(
                "relative residual {:e} after refinement",
                norm(&r) / rhs_norm
            )));
        }
        for (&i, v) in free.iter().zip(x) {
            u[i] = v;
        }
    }
    Field::new(n, 1, u, mesh.domain_id())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DarcyOptions {
    pub grf: GrfSpec,
    pub source: f64,
}

impl Default for DarcyOptions {
    fn default() -> Self {
        DarcyOptions { grf: GrfSpec::default(), source: 1.0 }
    }
}

/// Per-sample generator seed.
pub(crate) fn sample_rng(seed: u64, i: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ i as u64)
}

/// `n` pairs `(t(μ_i), u_i)` with `μ_i` drawn from the GRF in `grf_basis`.
pub fn make_darcy_dataset(
    mesh: &Mesh,
    grf_basis: &SpectralBasis,
    n: usize,
    seed: u64,
    bc: &DirichletBc,
    opts: &DarcyOptions,
) -> Result<Dataset> {
    if grf_basis.n_x() != mesh.n_vertices() {
        return Err(NormError::DimensionMismatch("GRF basis does not match the mesh".into()));
    }
    let mut inputs = Vec::with_capacity(n);
    let mut outputs = Vec::with_capacity(n);
    for i in 0..n {
        let mut rng = sample_rng(seed, i);
        let mut a = threshold_coefficient(&grf_sample(grf_basis, &opts.grf, &mut rng)?)?;
        a.domain_id = mesh.domain_id();
        outputs.push(darcy_solve(mesh, &a, opts.source, bc)?);
        inputs.push(a);
    }
    let bc_id = DomainId::hash_bytes(&[
        &bc.nodes.iter().flat_map(|i| (*i as u64).to_le_bytes()).collect::<Vec<u8>>(),
        &bc.values.iter().flat_map(|v| v.to_le_bytes()).collect::<Vec<u8>>(),
    ]);
    let provenance = Provenance {
        generator: "darcy".into(),
        seed,
        params: serde_json::json!({
            "n_samples": n,
            "mesh": mesh.domain_id(),
            "n_nodes": mesh.n_vertices(),
            "grf_shift": opts.grf.shift,
            "grf_power": opts.grf.power,
            "grf_modes": grf_basis.d_m(),
            "source": opts.source,
            "boundary": bc_id,
        }),
    };
    Dataset::new(inputs, outputs, provenance)
}
