use faer::Mat;

use super::{BasisKind, SpectralBasis};
use crate::dense::gemm;
use crate::field::Field;
use crate::mesh::dirichlet_energy;
use crate::sparse::SparseSymMatrix;
use crate::{NormError, Result};

/// Slack allowed for discretisation effects in the pass/fail verdict.
pub const BOUND_SLACK: f64 = 0.05;

/// Outcome of comparing a truncation residual with `‖∇f‖² / λ_{n+1}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundReport {
    /// `‖f - Π_n f‖²_M`, summed over channels.
    pub residual_norm_sq: f64,
    /// `fᵀSf / λ_{n+1}`, summed over channels.
    pub bound: f64,
    pub pass: bool,
}

impl BoundReport {
    /// `residual / bound`; 1 means the bound is attained.
    pub fn ratio(&self) -> f64 {
        if self.bound == 0.0 {
            if self.residual_norm_sq == 0.0 {
                0.0
            } else {
                f64::INFINITY
            }
        } else {
            self.residual_norm_sq / self.bound
        }
    }
}

/// Projects `f` M-orthogonally onto the first `n` LBO modes and compares the
/// squared residual with the Dirichlet energy over `λ_{n+1}`.
pub fn projection_bound_check(
    basis: &SpectralBasis,
    s: &SparseSymMatrix,
    m: &SparseSymMatrix,
    f: &Field,
    n: usize,
) -> Result<BoundReport> {
    if basis.kind() != BasisKind::Lbo {
        return Err(NormError::InvalidConfig("projection bound needs an LBO basis".into()));
    }
    if n >= basis.d_m() {
        return Err(NormError::InvalidModeCount(format!(
            "need n < d_m, got n = {n}, d_m = {}",
            basis.d_m()
        )));
    }
    let nx = basis.n_x();
    if s.dim() != nx || m.dim() != nx || f.n_nodes() != nx {
        return Err(NormError::DimensionMismatch("operators, basis and field must share nodes".into()));
    }
    let lam = basis.values()[n];
    let lam_max = basis.values().iter().fold(0.0f64, |a, v| a.max(v.abs()));
    if !(lam > 1e-8 * lam_max) {
        return Err(NormError::ZeroEigenvalue { index: n + 1, value: lam });
    }
    let energy: f64 = dirichlet_energy(s, f)?.iter().sum();
    let mass = m.diagonal();
    let mut residual_sq = 0.0;
    for c in 0..f.channels() {
        let fc = f.channel(c);
        let r = if n == 0 {
            fc
        } else {
            let phi = basis.modes().subcols(0, n);
            let mphi = Mat::from_fn(nx, n, |i, j| mass[i] * phi[(i, j)]);
            let mut gram = Mat::<f64>::zeros(n, n);
            gemm(gram.as_mut(), phi.transpose(), mphi.as_ref(), false);
            let mf = Mat::from_fn(nx, 1, |i, _| mass[i] * fc[i]);
            let mut rhs = Mat::<f64>::zeros(n, 1);
            gemm(rhs.as_mut(), phi.transpose(), mf.as_ref(), false);
            crate::dense::par();
            let llt = gram
                .llt(faer::Side::Lower)
                .map_err(|e| NormError::RankDeficient(format!("{e:?}")))?;
            use faer::linalg::solvers::Solve;
            let coeff = llt.solve(rhs.as_ref());
            let mut proj = Mat::<f64>::zeros(nx, 1);
            gemm(proj.as_mut(), phi, coeff.as_ref(), false);
            (0..nx).map(|i| fc[i] - proj[(i, 0)]).collect()
        };
        residual_sq += r.iter().zip(&mass).map(|(v, w)| w * v * v).sum::<f64>();
    }
    let bound = energy / lam;
    Ok(BoundReport {
        residual_norm_sq: residual_sq,
        bound,
        pass: residual_sq <= bound * (1.0 + BOUND_SLACK),
    })
}
