use std::f64::consts::PI;

use faer::Mat;

use super::{BasisKind, SpectralBasis};
use crate::field::DomainId;
use crate::{NormError, Result};

/// Real Fourier family `{1, cos 2πkt, sin 2πkt}` for `k = 1..(d_t-1)/2`
/// sampled at `t_i = i / n_t`, columns normalised to unit length.
pub fn fourier_basis(n_t: usize, d_t: usize) -> Result<SpectralBasis> {
    if d_t == 0 || d_t % 2 == 0 {
        return Err(NormError::InvalidModeCount(format!("d_t must be odd, got {d_t}")));
    }
    if d_t > n_t {
        return Err(NormError::InvalidModeCount(format!("d_t = {d_t} exceeds n_t = {n_t}")));
    }
    let mut modes = Mat::<f64>::zeros(n_t, d_t);
    let mut values = Vec::with_capacity(d_t);
    for i in 0..n_t {
        modes[(i, 0)] = 1.0;
    }
    values.push(0.0);
    for k in 1..=(d_t - 1) / 2 {
        for i in 0..n_t {
            let arg = 2.0 * PI * (k * i % n_t) as f64 / n_t as f64;
            modes[(i, 2 * k - 1)] = arg.cos();
            modes[(i, 2 * k)] = arg.sin();
        }
        let ev = (2.0 * PI * k as f64).powi(2);
        values.push(ev);
        values.push(ev);
    }
    for j in 0..d_t {
        let nrm = (0..n_t).map(|i| modes[(i, j)].powi(2)).sum::<f64>().sqrt();
        for i in 0..n_t {
            modes[(i, j)] /= nrm;
        }
    }
    SpectralBasis::from_modes(BasisKind::Fourier, modes.as_ref(), values, DomainId::time_grid(n_t))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::Field;
    use crate::spectral::encode;

    #[test]
    fn single_constant_column() {
        let b = fourier_basis(5, 1).unwrap();
        assert_eq!(b.d_m(), 1);
        for &v in b.mode(0) {
            assert!((v - 1.0 / 5f64.sqrt()).abs() < 1e-15);
        }
    }

    #[test]
    fn four_point_dft() {
        let b = fourier_basis(4, 3).unwrap();
        let expect = [[1.0, 1.0, 1.0, 1.0], [1.0, 0.0, -1.0, 0.0], [0.0, 1.0, 0.0, -1.0]];
        for (k, e) in expect.iter().enumerate() {
            let nrm = e.iter().map(|v: &f64| v * v).sum::<f64>().sqrt();
            for i in 0..4 {
                assert!((b.mode(k)[i] - e[i] / nrm).abs() < 1e-15);
            }
        }
        let tp = 4.0 * PI * PI;
        assert_eq!(b.values(), &[0.0, tp, tp]);
    }

    #[test]
    fn cosine_has_one_coefficient() {
        let n = 16;
        let b = fourier_basis(n, 7).unwrap();
        let f = Field::scalar((0..n).map(|i| (2.0 * PI * i as f64 / n as f64).cos()).collect(), b.source_id());
        let c = encode(&b, &f).unwrap();
        for k in 0..7 {
            if k != 1 {
                assert!(c[(k, 0)].abs() < 1e-8);
            }
        }
        assert!(c[(1, 0)].abs() > 1.0);
    }

    #[test]
    fn parity_and_range() {
        assert!(matches!(fourier_basis(8, 4), Err(NormError::InvalidModeCount(_))));
        assert!(matches!(fourier_basis(4, 5), Err(NormError::InvalidModeCount(_))));
        assert!(fourier_basis(4, 3).is_ok());
        assert!(fourier_basis(5, 5).is_ok());
    }
}
