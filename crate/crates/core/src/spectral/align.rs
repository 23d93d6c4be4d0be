use faer::Mat;

use super::{pseudo_inverse, SpectralBasis};
use crate::dense::{self, gemm};
use crate::{NormError, Result};

/// Default relative eigenvalue gap below which neighbouring modes are
/// treated as one eigenspace by [`SpectralBasis::align_to`].
pub const ALIGN_GAP: f64 = 0.02;

impl SpectralBasis {
    /// Rotates each eigenspace of `self` onto the matching columns of
    /// `reference` (same nodes, same mode count). Modes whose values differ
    /// by less than `gap` relative form one eigenspace and get the orthogonal
    /// Procrustes rotation; isolated modes only get a sign. Columns keep unit
    /// Euclidean norm and the values are unchanged.
    pub fn align_to(&self, reference: &SpectralBasis, gap: f64) -> Result<SpectralBasis> {
        if reference.n_x() != self.n_x() || reference.d_m() != self.d_m() {
            return Err(NormError::DimensionMismatch(format!(
                "cannot align {}x{} modes to {}x{}",
                self.n_x(),
                self.d_m(),
                reference.n_x(),
                reference.d_m()
            )));
        }
        let (n, d) = (self.n_x(), self.d_m());
        let vals = self.values();
        let mut out = self.modes().to_owned();
        let mut start = 0;
        while start < d {
            let mut end = start + 1;
            while end < d && (vals[end] - vals[end - 1]).abs() <= gap * vals[end].abs().max(vals[end - 1].abs()) {
                end += 1;
            }
            let k = end - start;
            let phi = self.modes().subcols(start, k);
            let psi = reference.modes().subcols(start, k);
            let mut c = Mat::<f64>::zeros(k, k);
            gemm(c.as_mut(), phi.transpose(), psi, false);
            dense::par();
            let svd = c.svd().map_err(|e| NormError::ConvergenceFailure(format!("{e:?}")))?;
            let mut q = Mat::<f64>::zeros(k, k);
            gemm(q.as_mut(), svd.U(), svd.V().transpose(), false);
            let mut rotated = Mat::<f64>::zeros(n, k);
            gemm(rotated.as_mut(), phi, q.as_ref(), false);
            for j in 0..k {
                let norm = (0..n).map(|i| rotated[(i, j)] * rotated[(i, j)]).sum::<f64>().sqrt();
                for i in 0..n {
                    out[(i, start + j)] = rotated[(i, j)] / norm;
                }
            }
            start = end;
        }
        let pinv = pseudo_inverse(out.as_ref())?;
        Ok(SpectralBasis::from_parts(
            self.kind(),
            out.as_ref(),
            pinv.as_ref(),
            vals.to_vec(),
            self.source_id(),
            self.mean().map(|m| m.to_vec()),
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{prolongate, unit_square_grid};
    use crate::spectral::lbo_basis_for_mesh;
    use crate::Field;

    #[test]
    fn aligns_refined_basis_with_prolongated_coarse_modes() {
        let coarse = unit_square_grid(8).unwrap();
        let d = 12;
        let bc = lbo_basis_for_mesh(&coarse, d).unwrap();
        let fine = coarse.refine().unwrap();
        let bf = lbo_basis_for_mesh(&fine, d).unwrap();
        let mut cols = Vec::new();
        for k in 0..d {
            let (_, f) = prolongate(&coarse, &Field::scalar(bc.mode(k).to_vec(), coarse.domain_id())).unwrap();
            cols.push(f.into_values());
        }
        let pm = Mat::from_fn(fine.n_vertices(), d, |i, j| cols[j][i]);
        let reference = SpectralBasis::from_modes(bc.kind(), pm.as_ref(), bc.values().to_vec(), fine.domain_id()).unwrap();
        let aligned = bf.align_to(&reference, ALIGN_GAP).unwrap();
        assert_eq!(aligned.values(), bf.values());
        assert!(aligned.biorthogonality_error() < 1e-8);
        for k in 0..d {
            let a = aligned.mode(k);
            let r = reference.mode(k);
            let cos = a.iter().zip(r).map(|(x, y)| x * y).sum::<f64>()
                / (r.iter().map(|y| y * y).sum::<f64>().sqrt());
            assert!(cos > 0.95, "mode {k}: cosine {cos}");
        }
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let a = lbo_basis_for_mesh(&unit_square_grid(4).unwrap(), 5).unwrap();
        let b = lbo_basis_for_mesh(&unit_square_grid(5).unwrap(), 5).unwrap();
        assert!(matches!(a.align_to(&b, ALIGN_GAP), Err(NormError::DimensionMismatch(_))));
    }
}
