use faer::Mat;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dense::gemm;
use crate::field::Field;
use crate::spectral::SpectralBasis;
use crate::{NormError, Result};

/// Covariance `(-Δ + shift I)^(-power)` of a Gaussian random field.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GrfSpec {
    pub shift: f64,
    pub power: u32,
}

impl Default for GrfSpec {
    fn default() -> Self {
        GrfSpec { shift: 25.0, power: 2 }
    }
}

impl GrfSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.shift > 0.0) || self.power < 1 {
            return Err(NormError::InvalidConfig(format!(
                "GRF needs shift > 0 and power >= 1, got {} and {}",
                self.shift, self.power
            )));
        }
        Ok(())
    }

    /// Standard deviation `(λ + shift)^(-power/2)` of the coefficient of a
    /// mode with eigenvalue `λ`.
    pub fn coefficient_std(&self, lambda: f64) -> f64 {
        (lambda.max(0.0) + self.shift).powf(-0.5 * self.power as f64)
    }
}

/// Karhunen-Loève draw `Σ ξ_i std_i φ_i` over the modes of `basis`, with
/// `ξ_i` iid standard normal. The modes are the basis columns as stored, so
/// `encode` of the result recovers `ξ_i std_i`.
pub fn grf_sample(basis: &SpectralBasis, spec: &GrfSpec, rng: &mut impl Rng) -> Result<Field> {
    spec.validate()?;
    let d = basis.d_m();
    let coeffs = Mat::from_fn(d, 1, |k, _| {
        let xi: f64 = StandardNormal.sample(rng);
        xi * spec.coefficient_std(basis.values()[k])
    });
    let mut values = vec![0.0; basis.n_x()];
    gemm(crate::dense::col_major_mut(&mut values, basis.n_x(), 1), basis.modes(), coeffs.as_ref(), false);
    Field::new(basis.n_x(), 1, values, basis.source_id())
}

/// `12` where `μ >= 0`, `4` elsewhere.
pub fn threshold_coefficient(mu: &Field) -> Result<Field> {
    if mu.channels() != 1 {
        return Err(NormError::DimensionMismatch(format!(
            "threshold expects one channel, got {}",
            mu.channels()
        )));
    }
    let vals = mu.values().iter().map(|&v| if v >= 0.0 { 12.0 } else { 4.0 }).collect();
    Field::new(mu.n_nodes(), 1, vals, mu.domain_id)
}
