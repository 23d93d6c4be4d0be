//! Laplace-Beltrami eigenbases: the smallest eigenpairs of `Sφ = λMφ` for a
//! stiffness `S` and lumped (diagonal) mass `M`.

use faer::Mat;
use rand::{Rng, SeedableRng};

use super::{pseudo_inverse, BasisKind, SpectralBasis};
use crate::dense::{self, fix_sign, gemm};
use crate::field::DomainId;
use crate::mesh::{cotangent_stiffness, lumped_mass, Mesh};
use crate::sparse::{EnvelopeCholesky, SparseSymMatrix};
use crate::{NormError, Result};

/// Largest problem solved with the dense eigensolver under [`EigenSolver::Auto`].
pub const DENSE_LIMIT: usize = 3000;
/// Relative eigen-residual every returned pair must satisfy.
pub const RESIDUAL_TOL: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EigenSolver {
    /// Dense up to [`DENSE_LIMIT`] nodes, Lanczos above.
    Auto,
    Dense,
    Lanczos,
}

#[derive(Debug, Clone, Copy)]
pub struct LboOptions {
    pub solver: EigenSolver,
    /// Shift-invert pole: factorises `S - shift * M`.
    pub shift: f64,
    /// Convergence tolerance on relative Ritz residuals.
    pub tol: f64,
    /// Maximum number of block steps.
    pub max_iter: usize,
    pub block_size: usize,
    pub seed: u64,
}

impl Default for LboOptions {
    fn default() -> Self {
        LboOptions {
            solver: EigenSolver::Auto,
            shift: -1e-3,
            tol: 1e-9,
            max_iter: 500,
            block_size: 8,
            seed: 0,
        }
    }
}

pub fn lbo_basis(s: &SparseSymMatrix, m: &SparseSymMatrix, d_m: usize) -> Result<SpectralBasis> {
    lbo_basis_with(s, m, d_m, &LboOptions::default())
}

/// Assembles the mesh operators and computes `d_m` modes; the basis is
/// tagged with the mesh's domain id.
pub fn lbo_basis_for_mesh(mesh: &Mesh, d_m: usize) -> Result<SpectralBasis> {
    let s = cotangent_stiffness(mesh)?;
    let m = lumped_mass(mesh)?;
    Ok(lbo_basis(&s, &m, d_m)?.with_source_id(mesh.domain_id()))
}

pub fn lbo_basis_with(
    s: &SparseSymMatrix,
    m: &SparseSymMatrix,
    d_m: usize,
    opts: &LboOptions,
) -> Result<SpectralBasis> {
    let n = s.dim();
    if m.dim() != n {
        return Err(NormError::DimensionMismatch(format!(
            "stiffness is {n}x{n}, mass is {0}x{0}",
            m.dim()
        )));
    }
    if d_m == 0 || d_m > n {
        return Err(NormError::DimensionMismatch(format!(
            "requested {d_m} modes on {n} nodes"
        )));
    }
    if !m.is_diagonal() {
        return Err(NormError::InvalidConfig("mass matrix must be diagonal (lumped)".into()));
    }
    let mass = m.diagonal();
    if let Some(i) = mass.iter().position(|&v| !(v > 0.0)) {
        return Err(NormError::InvalidConfig(format!("mass entry {i} is not positive")));
    }
    let use_dense = match opts.solver {
        EigenSolver::Dense => true,
        EigenSolver::Lanczos => false,
        EigenSolver::Auto => n <= DENSE_LIMIT,
    };
    let (values, mut vectors) = if use_dense {
        dense_pencil(s, &mass, d_m)?
    } else {
        lanczos_pencil(s, &mass, d_m, opts)?
    };
    for col in vectors.iter_mut() {
        let nrm = col.iter().map(|v| v * v).sum::<f64>().sqrt();
        col.iter_mut().for_each(|v| *v /= nrm);
        fix_sign(col);
    }
    let phi = Mat::from_fn(n, d_m, |i, j| vectors[j][i]);
    let residuals = eigen_residuals_raw(s, &mass, &phi, &values);
    if let Some((k, r)) = residuals
        .iter()
        .enumerate()
        .find(|(_, &r)| !(r <= RESIDUAL_TOL))
    {
        return Err(NormError::ConvergenceFailure(format!(
            "eigenpair {k} has relative residual {r:e}"
        )));
    }
    let pinv = pseudo_inverse(phi.as_ref())?;
    let source = DomainId::hash_bytes(&[b"lbo-operators", &matrix_bytes(s), &matrix_bytes(m)]);
    Ok(SpectralBasis::from_parts(
        BasisKind::Lbo,
        phi.as_ref(),
        pinv.as_ref(),
        values,
        source,
        None,
    ))
}

fn matrix_bytes(a: &SparseSymMatrix) -> Vec<u8> {
    let mut out = Vec::new();
    for i in 0..a.dim() {
        for (j, v) in a.row(i) {
            out.extend_from_slice(&(i as u64).to_le_bytes());
            out.extend_from_slice(&(j as u64).to_le_bytes());
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

/// Relative residuals `‖Sφ - λMφ‖ / ‖Sφ‖` per mode. Modes in the kernel
/// (`‖Sφ‖` at round-off level) are measured against `‖S‖·‖φ‖` instead.
pub fn eigen_residuals(basis: &SpectralBasis, s: &SparseSymMatrix, m: &SparseSymMatrix) -> Result<Vec<f64>> {
    if s.dim() != basis.n_x() || m.dim() != basis.n_x() {
        return Err(NormError::DimensionMismatch("operators do not match basis".into()));
    }
    let phi = basis.modes().to_owned();
    Ok(eigen_residuals_raw(s, &m.diagonal(), &phi, basis.values()))
}

fn eigen_residuals_raw(s: &SparseSymMatrix, mass: &[f64], phi: &Mat<f64>, values: &[f64]) -> Vec<f64> {
    let n = s.dim();
    let s_scale = s.max_abs();
    (0..phi.ncols())
        .map(|k| {
            let x: Vec<f64> = (0..n).map(|i| phi[(i, k)]).collect();
            let sx = s.matvec(&x);
            let xn = x.iter().map(|v| v * v).sum::<f64>().sqrt();
            let mut res = 0.0;
            let mut sxn = 0.0;
            for i in 0..n {
                let r = sx[i] - values[k] * mass[i] * x[i];
                res += r * r;
                sxn += sx[i] * sx[i];
            }
            let denom = sxn.sqrt().max(1e-6 * s_scale * xn);
            res.sqrt() / denom
        })
        .collect()
}

/// Dense route: `M^{-1/2} S M^{-1/2} y = λ y`, `φ = M^{-1/2} y`.
fn dense_pencil(s: &SparseSymMatrix, mass: &[f64], d_m: usize) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    let n = s.dim();
    let inv_sqrt: Vec<f64> = mass.iter().map(|m| 1.0 / m.sqrt()).collect();
    let mut a = Mat::<f64>::zeros(n, n);
    for i in 0..n {
        for (j, v) in s.row(i) {
            a[(i, j)] = v * inv_sqrt[i] * inv_sqrt[j];
        }
    }
    let (values, vecs) = dense::sym_eigen(a.as_ref())?;
    let out = (0..d_m)
        .map(|k| (0..n).map(|i| vecs[(i, k)] * inv_sqrt[i]).collect())
        .collect();
    Ok((values[..d_m].to_vec(), out))
}

fn m_dot(mass: &[f64], x: &[f64], y: &[f64]) -> f64 {
    mass.iter().zip(x).zip(y).map(|((m, a), b)| m * a * b).sum()
}

/// Orthogonalises `w` against `basis` in the M-inner product (two passes of
/// classical Gram-Schmidt). Returns the norm after projection.
fn m_orthogonalise(mass: &[f64], basis: &[Vec<f64>], w: &mut [f64]) -> f64 {
    for _ in 0..2 {
        let mw: Vec<f64> = mass.iter().zip(w.iter()).map(|(m, v)| m * v).collect();
        let coeffs: Vec<f64> = basis
            .iter()
            .map(|q| q.iter().zip(&mw).map(|(a, b)| a * b).sum())
            .collect();
        for (q, c) in basis.iter().zip(coeffs) {
            for (wi, qi) in w.iter_mut().zip(q) {
                *wi -= c * qi;
            }
        }
    }
    m_dot(mass, w, w).sqrt()
}

/// Shift-invert block Lanczos with full reorthogonalisation in the
/// M-inner product, followed by Rayleigh-Ritz on `S`.
fn lanczos_pencil(
    s: &SparseSymMatrix,
    mass: &[f64],
    d_m: usize,
    opts: &LboOptions,
) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    let n = s.dim();
    let b = opts.block_size.max(1).min(n);
    let shifted = s.add_scaled(-opts.shift, &SparseSymMatrix::from_diagonal(mass))?;
    let chol = EnvelopeCholesky::factor(&shifted)?;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(opts.seed);
    let s_scale = s.max_abs();

    let mut basis: Vec<Vec<f64>> = Vec::new();
    let mut s_basis: Vec<Vec<f64>> = Vec::new();
    let push = |basis: &mut Vec<Vec<f64>>, s_basis: &mut Vec<Vec<f64>>, mut w: Vec<f64>, rng: &mut rand_chacha::ChaCha8Rng| -> bool {
        let before = m_dot(mass, &w, &w).sqrt();
        let mut after = m_orthogonalise(mass, basis, &mut w);
        if !(after > 1e-10 * before) {
            // deflated direction: continue the Krylov space with a random vector
            w = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            after = m_orthogonalise(mass, basis, &mut w);
            if !(after > 1e-12) {
                return false;
            }
        }
        w.iter_mut().for_each(|v| *v /= after);
        s_basis.push(s.matvec(&w));
        basis.push(w);
        true
    };

    for _ in 0..b {
        let w: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        push(&mut basis, &mut s_basis, w, &mut rng);
    }
    let mut block_start = 0;
    let mut last_rr = 0;
    for _iter in 0..opts.max_iter {
        let block_end = basis.len();
        let exhausted = basis.len() >= n;
        let ready = basis.len() >= d_m + 2 * b && (basis.len() - last_rr >= 4 * b || exhausted);
        if ready || exhausted {
            last_rr = basis.len();
            if let Some(result) = rayleigh_ritz(s, mass, &basis, &s_basis, d_m, opts.tol, s_scale, exhausted)? {
                return Ok(result);
            }
            if exhausted {
                break;
            }
        }
        for k in block_start..block_end {
            let rhs: Vec<f64> = basis[k].iter().zip(mass).map(|(v, m)| v * m).collect();
            let w = chol.solve(&rhs);
            if basis.len() >= n {
                break;
            }
            if !push(&mut basis, &mut s_basis, w, &mut rng) {
                break;
            }
        }
        block_start = block_end;
    }
    Err(NormError::ConvergenceFailure(format!(
        "block Lanczos did not resolve {d_m} eigenpairs within {} block steps ({} vectors)",
        opts.max_iter,
        basis.len()
    )))
}

#[allow(clippy::too_many_arguments)]
fn rayleigh_ritz(
    s: &SparseSymMatrix,
    mass: &[f64],
    basis: &[Vec<f64>],
    s_basis: &[Vec<f64>],
    d_m: usize,
    tol: f64,
    s_scale: f64,
    force: bool,
) -> Result<Option<(Vec<f64>, Vec<Vec<f64>>)>> {
    let n = s.dim();
    let m = basis.len();
    let v: Vec<f64> = basis.iter().flatten().copied().collect();
    let sv: Vec<f64> = s_basis.iter().flatten().copied().collect();
    let vmat = dense::col_major(&v, n, m);
    let svmat = dense::col_major(&sv, n, m);
    let mut h = Mat::<f64>::zeros(m, m);
    gemm(h.as_mut(), vmat.transpose(), svmat, false);
    let hs = Mat::from_fn(m, m, |i, j| 0.5 * (h[(i, j)] + h[(j, i)]));
    let (theta, y) = dense::sym_eigen(hs.as_ref())?;
    let mut x = Mat::<f64>::zeros(n, d_m);
    gemm(x.as_mut(), vmat, y.as_ref().subcols(0, d_m), false);
    let mut out = Vec::with_capacity(d_m);
    for k in 0..d_m {
        let col: Vec<f64> = (0..n).map(|i| x[(i, k)]).collect();
        let sx = s.matvec(&col);
        let xn = col.iter().map(|v| v * v).sum::<f64>().sqrt();
        let sxn = sx.iter().map(|v| v * v).sum::<f64>().sqrt();
        let res = sx
            .iter()
            .zip(&col)
            .zip(mass)
            .map(|((a, c), mm)| (a - theta[k] * mm * c).powi(2))
            .sum::<f64>()
            .sqrt();
        if !force && res > tol * sxn.max(1e-6 * s_scale * xn) {
            return Ok(None);
        }
        out.push(col);
    }
    Ok(Some((theta[..d_m].to_vec(), out)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{unit_square_grid, CellKind};
    use std::f64::consts::PI;

    #[test]
    fn constant_mode_comes_first() {
        let mesh = unit_square_grid(8).unwrap();
        let b = lbo_basis_for_mesh(&mesh, 6).unwrap();
        assert!(b.values()[0].abs() <= 1e-8 * b.values()[5]);
        let c = b.mode(0);
        let mean = c.iter().sum::<f64>() / c.len() as f64;
        assert!(mean > 0.0);
        for v in c {
            assert!((v - mean).abs() < 1e-10);
        }
        for w in b.values().windows(2) {
            assert!(w[0] <= w[1] + 1e-12);
        }
        assert_eq!(b.source_id(), mesh.domain_id());
    }

    #[test]
    fn full_basis_on_three_vertices_is_invertible() {
        let mesh = Mesh::new(
            2,
            CellKind::Triangle,
            vec![[0.0; 3], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]],
            vec![0, 1, 2],
        )
        .unwrap();
        let b = lbo_basis_for_mesh(&mesh, 3).unwrap();
        let mut prod = Mat::<f64>::zeros(3, 3);
        gemm(prod.as_mut(), b.modes(), b.pinv(), false);
        for i in 0..3 {
            for j in 0..3 {
                let e = if i == j { 1.0 } else { 0.0 };
                assert!((prod[(i, j)] - e).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn lanczos_agrees_with_dense() {
        let mesh = unit_square_grid(12).unwrap();
        let s = cotangent_stiffness(&mesh).unwrap();
        let m = lumped_mass(&mesh).unwrap();
        let dense = lbo_basis_with(&s, &m, 10, &LboOptions { solver: EigenSolver::Dense, ..Default::default() }).unwrap();
        let lz = lbo_basis_with(&s, &m, 10, &LboOptions { solver: EigenSolver::Lanczos, ..Default::default() }).unwrap();
        for (a, b) in dense.values().iter().zip(lz.values()) {
            assert!((a - b).abs() <= 1e-8 * (1.0 + a.abs()), "{a} vs {b}");
        }
        // compare projectors (degenerate pairs may mix)
        let proj = |b: &SpectralBasis| {
            let mut p = Mat::<f64>::zeros(b.n_x(), b.n_x());
            gemm(p.as_mut(), b.modes(), b.pinv(), false);
            p
        };
        let (pd, pl) = (proj(&dense), proj(&lz));
        let diff = dense::frobenius((&pd - &pl).as_ref());
        assert!(diff < 1e-6, "projector difference {diff:e}");
        for r in eigen_residuals(&lz, &s, &m).unwrap() {
            assert!(r <= RESIDUAL_TOL);
        }
    }

    #[test]
    fn coarse_neumann_spectrum() {
        let mesh = unit_square_grid(24).unwrap();
        let b = lbo_basis_for_mesh(&mesh, 4).unwrap();
        let expect = [PI * PI, PI * PI, 2.0 * PI * PI];
        for (k, e) in expect.iter().enumerate() {
            assert!((b.values()[k + 1] - e).abs() / e < 0.02);
        }
    }

    #[test]
    fn rejects_bad_requests() {
        let mesh = unit_square_grid(2).unwrap();
        let s = cotangent_stiffness(&mesh).unwrap();
        let m = lumped_mass(&mesh).unwrap();
        assert!(matches!(lbo_basis(&s, &m, 10), Err(NormError::DimensionMismatch(_))));
        let small = SparseSymMatrix::from_diagonal(&[1.0; 4]);
        assert!(matches!(lbo_basis(&s, &small, 2), Err(NormError::DimensionMismatch(_))));
    }
}
