//! Truncated spectral bases and the encode/decode maps between nodal fields
//! and mode coefficients.
//!
//! Every basis stores its mode matrix `Φ` (`n_x × d_m`, columns of unit
//! Euclidean norm) together with the pseudo-inverse `Φ† = (ΦᵀΦ)⁻¹Φᵀ` used by
//! the encoder. LBO and Fourier bases carry ascending Laplacian eigenvalues;
//! POD bases carry descending singular values.

mod align;
mod bound;
mod fourier;
mod io;
mod lbo;
mod pod;

pub use align::ALIGN_GAP;
pub use bound::{projection_bound_check, BoundReport, BOUND_SLACK};
pub use fourier::fourier_basis;
pub use io::{read_basis, read_basis_file, write_basis, write_basis_file};
pub use lbo::{eigen_residuals, lbo_basis, lbo_basis_for_mesh, lbo_basis_with, EigenSolver, LboOptions};
pub use pod::{pod_basis, PodOptions};

use faer::{Mat, MatRef};

pub use crate::field::Field;
use crate::dense::{self, col_major, gemm};
use crate::field::DomainId;
use crate::{NormError, Result};

/// Condition-number ceiling for `ΦᵀΦ` in [`pseudo_inverse`].
pub const MAX_GRAM_CONDITION: f64 = 1e12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BasisKind {
    Lbo,
    Pod,
    Fourier,
}

impl BasisKind {
    pub fn name(self) -> &'static str {
        match self {
            BasisKind::Lbo => "lbo",
            BasisKind::Pod => "pod",
            BasisKind::Fourier => "fourier",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpectralBasis {
    kind: BasisKind,
    n_x: usize,
    d_m: usize,
    /// Column-major `n_x × d_m`.
    modes: Vec<f64>,
    /// Column-major `d_m × n_x`.
    pinv: Vec<f64>,
    values: Vec<f64>,
    source_id: DomainId,
    mean: Option<Vec<f64>>,
}

impl SpectralBasis {
    /// Wraps a mode matrix, computing its pseudo-inverse.
    pub fn from_modes(kind: BasisKind, modes: MatRef<'_, f64>, values: Vec<f64>, source_id: DomainId) -> Result<Self> {
        if values.len() != modes.ncols() {
            return Err(NormError::DimensionMismatch(format!(
                "{} values for {} modes",
                values.len(),
                modes.ncols()
            )));
        }
        let pinv = pseudo_inverse(modes)?;
        Ok(Self::from_parts(kind, modes, pinv.as_ref(), values, source_id, None))
    }

    pub(crate) fn from_parts(
        kind: BasisKind,
        modes: MatRef<'_, f64>,
        pinv: MatRef<'_, f64>,
        values: Vec<f64>,
        source_id: DomainId,
        mean: Option<Vec<f64>>,
    ) -> Self {
        let (n_x, d_m) = (modes.nrows(), modes.ncols());
        let mut m = Vec::with_capacity(n_x * d_m);
        for j in 0..d_m {
            for i in 0..n_x {
                m.push(modes[(i, j)]);
            }
        }
        let mut p = Vec::with_capacity(n_x * d_m);
        for j in 0..n_x {
            for i in 0..d_m {
                p.push(pinv[(i, j)]);
            }
        }
        SpectralBasis {
            kind,
            n_x,
            d_m,
            modes: m,
            pinv: p,
            values,
            source_id,
            mean,
        }
    }

    pub fn kind(&self) -> BasisKind {
        self.kind
    }

    pub fn n_x(&self) -> usize {
        self.n_x
    }

    pub fn d_m(&self) -> usize {
        self.d_m
    }

    /// Eigenvalues (LBO, Fourier) or singular values (POD).
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn source_id(&self) -> DomainId {
        self.source_id
    }

    pub fn with_source_id(mut self, id: DomainId) -> Self {
        self.source_id = id;
        self
    }

    /// Snapshot mean added back on decode (centred POD only).
    pub fn mean(&self) -> Option<&[f64]> {
        self.mean.as_deref()
    }

    pub fn modes(&self) -> MatRef<'_, f64> {
        col_major(&self.modes, self.n_x, self.d_m)
    }

    pub fn pinv(&self) -> MatRef<'_, f64> {
        col_major(&self.pinv, self.d_m, self.n_x)
    }

    pub fn mode(&self, k: usize) -> &[f64] {
        &self.modes[k * self.n_x..(k + 1) * self.n_x]
    }

    /// Leading `d` modes with a freshly computed pseudo-inverse.
    pub fn truncate(&self, d: usize) -> Result<SpectralBasis> {
        if d == 0 || d > self.d_m {
            return Err(NormError::InvalidModeCount(format!(
                "cannot truncate {} modes to {d}",
                self.d_m
            )));
        }
        if d == self.d_m {
            return Ok(self.clone());
        }
        let modes = self.modes().subcols(0, d);
        let pinv = pseudo_inverse(modes)?;
        Ok(Self::from_parts(
            self.kind,
            modes,
            pinv.as_ref(),
            self.values[..d].to_vec(),
            self.source_id,
            self.mean.clone(),
        ))
    }

    /// `Φ†Φ - I` in Frobenius norm.
    pub fn biorthogonality_error(&self) -> f64 {
        let mut g = Mat::<f64>::zeros(self.d_m, self.d_m);
        gemm(g.as_mut(), self.pinv(), self.modes(), false);
        for i in 0..self.d_m {
            g[(i, i)] -= 1.0;
        }
        dense::frobenius(g.as_ref())
    }
}

/// `Φ† = (ΦᵀΦ)⁻¹Φᵀ`; fails when the Gram matrix is singular or its
/// condition number reaches [`MAX_GRAM_CONDITION`].
pub fn pseudo_inverse(phi: MatRef<'_, f64>) -> Result<Mat<f64>> {
    let d = phi.ncols();
    if d == 0 {
        return Err(NormError::InvalidModeCount("empty basis".into()));
    }
    let mut gram = Mat::<f64>::zeros(d, d);
    gemm(gram.as_mut(), phi.transpose(), phi, false);
    let (ev, _) = dense::sym_eigen(gram.as_ref())?;
    let (lo, hi) = (ev[0], ev[d - 1]);
    if !(lo > 0.0) || hi / lo >= MAX_GRAM_CONDITION {
        return Err(NormError::RankDeficient(format!(
            "Gram matrix eigenvalues in [{lo:e}, {hi:e}]"
        )));
    }
    dense::par();
    let llt = gram
        .llt(faer::Side::Lower)
        .map_err(|e| NormError::RankDeficient(format!("{e:?}")))?;
    use faer::linalg::solvers::Solve;
    Ok(llt.solve(phi.transpose()))
}

fn check_nodes(basis: &SpectralBasis, n: usize) -> Result<()> {
    if basis.n_x != n {
        return Err(NormError::DimensionMismatch(format!(
            "basis has {} nodes, field has {n}",
            basis.n_x
        )));
    }
    Ok(())
}

/// Mode coefficients `Φ†V` (`d_m × channels`).
pub fn encode(basis: &SpectralBasis, v: &Field) -> Result<Mat<f64>> {
    check_nodes(basis, v.n_nodes())?;
    let ch = v.channels();
    let mut out = Mat::<f64>::zeros(basis.d_m, ch);
    match &basis.mean {
        None => gemm(out.as_mut(), basis.pinv(), dense::row_major(v.values(), v.n_nodes(), ch), false),
        Some(mean) => {
            let mut centred = v.values().to_vec();
            for (i, m) in mean.iter().enumerate() {
                for c in 0..ch {
                    centred[i * ch + c] -= m;
                }
            }
            gemm(out.as_mut(), basis.pinv(), dense::row_major(&centred, v.n_nodes(), ch), false);
        }
    }
    Ok(out)
}

/// Field `ΦB` on the basis nodes.
pub fn decode(basis: &SpectralBasis, coeffs: MatRef<'_, f64>) -> Result<Field> {
    if coeffs.nrows() != basis.d_m {
        return Err(NormError::DimensionMismatch(format!(
            "basis has {} modes, coefficients have {} rows",
            basis.d_m,
            coeffs.nrows()
        )));
    }
    let ch = coeffs.ncols();
    let mut values = vec![0.0; basis.n_x * ch];
    gemm(dense::row_major_mut(&mut values, basis.n_x, ch), basis.modes(), coeffs, false);
    if let Some(mean) = &basis.mean {
        for (i, m) in mean.iter().enumerate() {
            for c in 0..ch {
                values[i * ch + c] += m;
            }
        }
    }
    Field::new(basis.n_x, ch, values, basis.source_id)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn mat(rows: &[&[f64]]) -> Mat<f64> {
        Mat::from_fn(rows.len(), rows[0].len(), |i, j| rows[i][j])
    }

    #[test]
    fn pinv_of_single_column() {
        let p = pseudo_inverse(mat(&[&[2.0], &[0.0]]).as_ref()).unwrap();
        assert_eq!((p.nrows(), p.ncols()), (1, 2));
        assert!((p[(0, 0)] - 0.5).abs() < 1e-15);
        assert_eq!(p[(0, 1)], 0.0);
    }

    #[test]
    fn pinv_of_orthonormal_is_transpose() {
        let s = 0.5f64.sqrt();
        let phi = mat(&[&[s, s], &[s, -s], &[0.0, 0.0]]);
        let p = pseudo_inverse(phi.as_ref()).unwrap();
        for i in 0..2 {
            for j in 0..3 {
                assert!((p[(i, j)] - phi[(j, i)]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn pinv_rejects_repeated_columns() {
        let phi = mat(&[&[1.0, 1.0], &[2.0, 2.0], &[3.0, 3.0]]);
        assert!(matches!(pseudo_inverse(phi.as_ref()), Err(NormError::RankDeficient(_))));
    }

    fn random_basis(n: usize, d: usize, seed: u64) -> SpectralBasis {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let phi = Mat::from_fn(n, d, |_, _| rng.random_range(-1.0..1.0));
        SpectralBasis::from_modes(BasisKind::Pod, phi.as_ref(), vec![0.0; d], DomainId::default()).unwrap()
    }

    #[test]
    fn encode_of_basis_column_is_unit_vector() {
        let b = random_basis(7, 3, 1);
        for k in 0..3 {
            let f = Field::scalar(b.mode(k).to_vec(), DomainId::default());
            let c = encode(&b, &f).unwrap();
            for i in 0..3 {
                let expect = if i == k { 1.0 } else { 0.0 };
                assert!((c[(i, 0)] - expect).abs() < 1e-8);
            }
        }
        let zero = Field::zeros(7, 2, DomainId::default());
        assert!(encode(&b, &zero).unwrap().col_iter().all(|c| c.iter().all(|&v| v == 0.0)));
        assert!(matches!(
            encode(&b, &Field::zeros(6, 1, DomainId::default())),
            Err(NormError::DimensionMismatch(_))
        ));
    }

    #[test]
    fn decode_rejects_wrong_rows() {
        let b = random_basis(5, 2, 2);
        let c = Mat::<f64>::zeros(3, 1);
        assert!(matches!(decode(&b, c.as_ref()), Err(NormError::DimensionMismatch(_))));
    }

    proptest! {
        #[test]
        fn encode_decode_identities(seed in 0u64..1000, d in 1usize..5, ch in 1usize..3) {
            use rand::{Rng, SeedableRng};
            let n = 9;
            let b = random_basis(n, d, seed);
            prop_assert!(b.biorthogonality_error() <= 1e-8 * (d as f64).sqrt());
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed + 17);
            let coeffs = Mat::from_fn(d, ch, |_, _| rng.random_range(-2.0..2.0));
            // encode(decode(B)) = B
            let f = decode(&b, coeffs.as_ref()).unwrap();
            let back = encode(&b, &f).unwrap();
            for i in 0..d { for c in 0..ch {
                prop_assert!((back[(i, c)] - coeffs[(i, c)]).abs() <= 1e-8 * (1.0 + coeffs[(i, c)].abs()));
            }}
            // decode(encode) is a projector: idempotent
            let g = Field::from_fn(n, ch, DomainId::default(), |_, _| rng.random_range(-1.0..1.0));
            let once = decode(&b, encode(&b, &g).unwrap().as_ref()).unwrap();
            let twice = decode(&b, encode(&b, &once).unwrap().as_ref()).unwrap();
            prop_assert!(once.max_abs_diff(&twice) <= 1e-8 * (1.0 + once.norm()));
            // linearity of decode
            let alpha = 1.7;
            let c2 = Mat::from_fn(d, ch, |_, _| rng.random_range(-2.0..2.0));
            let lhs = decode(&b, (&coeffs * alpha + &c2).as_ref()).unwrap();
            let rhs = f.scaled(alpha).axpy(1.0, &decode(&b, c2.as_ref()).unwrap()).unwrap();
            prop_assert!(lhs.max_abs_diff(&rhs) <= 1e-12 * (1.0 + lhs.norm()));
        }
    }
}
