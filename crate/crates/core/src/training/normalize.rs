use serde::{Deserialize, Serialize};

use crate::field::Field;
use crate::{NormError, Result};

/// Channels whose standard deviation falls below this pass through unscaled.
pub const MIN_STD: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormalizationMode {
    None,
    #[default]
    GlobalPerChannel,
}

/// Per-channel affine map `x ↦ (x - mean) / std`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Normalizer {
    pub fn identity(channels: usize) -> Self {
        Normalizer { mean: vec![0.0; channels], std: vec![1.0; channels] }
    }

    pub fn channels(&self) -> usize {
        self.mean.len()
    }

    pub fn is_identity(&self) -> bool {
        self.mean.iter().all(|&m| m == 0.0) && self.std.iter().all(|&s| s == 1.0)
    }

    /// Mean and population standard deviation of every channel over all
    /// nodes of all `fields`.
    pub fn fit(fields: &[&Field]) -> Result<Self> {
        let first = fields.first().ok_or(NormError::EmptyBatch)?;
        let ch = first.channels();
        let mut sum = vec![0.0; ch];
        let mut count = 0usize;
        for f in fields {
            if f.channels() != ch {
                return Err(NormError::ShapeMismatch(format!(
                    "expected {ch} channels, found {}",
                    f.channels()
                )));
            }
            for row in f.values().chunks_exact(ch) {
                for (s, v) in sum.iter_mut().zip(row) {
                    *s += v;
                }
            }
            count += f.n_nodes();
        }
        let mean: Vec<f64> = sum.iter().map(|s| s / count as f64).collect();
        let mut sq = vec![0.0; ch];
        for f in fields {
            for row in f.values().chunks_exact(ch) {
                for c in 0..ch {
                    let d = row[c] - mean[c];
                    sq[c] += d * d;
                }
            }
        }
        let mut out = Normalizer { mean, std: Vec::with_capacity(ch) };
        for c in 0..ch {
            let s = (sq[c] / count as f64).sqrt();
            if s < MIN_STD {
                log::warn!("channel {c} has zero variance; passing it through unscaled");
                out.mean[c] = 0.0;
                out.std.push(1.0);
            } else {
                out.std.push(s);
            }
        }
        Ok(out)
    }

    fn check(&self, f: &Field) -> Result<()> {
        if f.channels() != self.channels() {
            return Err(NormError::ShapeMismatch(format!(
                "normalizer has {} channels, field has {}",
                self.channels(),
                f.channels()
            )));
        }
        Ok(())
    }

    pub fn apply(&self, f: &Field) -> Result<Field> {
        self.check(f)?;
        let mut out = f.clone();
        let ch = self.channels();
        for (k, v) in out.values_mut().iter_mut().enumerate() {
            let c = k % ch;
            *v = (*v - self.mean[c]) / self.std[c];
        }
        Ok(out)
    }

    pub fn invert(&self, f: &Field) -> Result<Field> {
        self.check(f)?;
        let mut out = f.clone();
        let ch = self.channels();
        for (k, v) in out.values_mut().iter_mut().enumerate() {
            let c = k % ch;
            *v = *v * self.std[c] + self.mean[c];
        }
        Ok(out)
    }
}

/// Statistics of the given (training) fields, or the identity map for
/// [`NormalizationMode::None`].
pub fn fit_normalizer(fields: &[&Field], mode: NormalizationMode) -> Result<Normalizer> {
    match mode {
        NormalizationMode::None => {
            let first = fields.first().ok_or(NormError::EmptyBatch)?;
            Ok(Normalizer::identity(first.channels()))
        }
        NormalizationMode::GlobalPerChannel => Normalizer::fit(fields),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::DomainId;
    use rand::SeedableRng;
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn standard_normal_channel() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let vals: Vec<f64> = (0..100_000).map(|_| StandardNormal.sample(&mut rng)).collect();
        let f = Field::scalar(vals, DomainId::default());
        let n = Normalizer::fit(&[&f]).unwrap();
        // sampling error of the mean and std at 1e5 draws is about 3e-3
        assert!(n.mean[0].abs() < 0.015);
        assert!((n.std[0] - 1.0).abs() < 0.015);
    }

    #[test]
    fn constant_channel_passes_through() {
        let f = Field::from_fn(5, 2, DomainId::default(), |i, c| if c == 0 { 3.0 } else { i as f64 });
        let n = Normalizer::fit(&[&f]).unwrap();
        assert_eq!((n.mean[0], n.std[0]), (0.0, 1.0));
        let g = n.apply(&f).unwrap();
        assert_eq!(g.get(2, 0), 3.0);
        assert!(n.invert(&g).unwrap().max_abs_diff(&f) <= 1e-12);
    }

    #[test]
    fn none_mode_is_identity() {
        let f = Field::from_fn(4, 3, DomainId::default(), |i, c| (i + c) as f64);
        let n = fit_normalizer(&[&f], NormalizationMode::None).unwrap();
        assert!(n.is_identity());
        assert!(matches!(fit_normalizer(&[], NormalizationMode::None), Err(NormError::EmptyBatch)));
    }
}
