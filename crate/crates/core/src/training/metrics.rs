use serde::{Deserialize, Serialize};

use crate::field::Field;
use crate::{NormError, Result};

fn check_shapes(pred: &Field, target: &Field) -> Result<()> {
    if !pred.same_shape(target) {
        return Err(NormError::ShapeMismatch(format!(
            "prediction is {}x{}, target is {}x{}",
            pred.n_nodes(),
            pred.channels(),
            target.n_nodes(),
            target.channels()
        )));
    }
    Ok(())
}

/// `‖pred - target‖₂ / ‖target‖₂` over all nodes and channels.
pub fn rel_l2(pred: &Field, target: &Field) -> Result<f64> {
    check_shapes(pred, target)?;
    let mut num = 0.0;
    let mut den = 0.0;
    for (p, t) in pred.values().iter().zip(target.values()) {
        num += (p - t) * (p - t);
        den += t * t;
    }
    if den == 0.0 {
        return Err(NormError::ZeroTarget);
    }
    Ok((num / den).sqrt())
}

/// Largest absolute nodal error of one sample.
pub fn max_error(pred: &Field, target: &Field) -> Result<f64> {
    check_shapes(pred, target)?;
    Ok(pred.max_abs_diff(target))
}

/// Mean over samples of the largest absolute nodal error.
pub fn mme_batch(preds: &[Field], targets: &[Field]) -> Result<f64> {
    if preds.is_empty() {
        return Err(NormError::EmptyBatch);
    }
    if preds.len() != targets.len() {
        return Err(NormError::ShapeMismatch(format!(
            "{} predictions for {} targets",
            preds.len(),
            targets.len()
        )));
    }
    let mut sum = 0.0;
    for (p, t) in preds.iter().zip(targets) {
        sum += max_error(p, t)?;
    }
    Ok(sum / preds.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    /// Mean per-sample relative L2 error.
    pub rel_l2: f64,
    /// Standard deviation of the per-sample relative L2 error.
    pub rel_l2_std: f64,
    /// Mean per-sample maximum error, in target units.
    pub mme: f64,
    pub per_sample_rel_l2: Vec<f64>,
    pub per_sample_max_error: Vec<f64>,
}

impl Metrics {
    pub fn from_samples(rel: Vec<f64>, max: Vec<f64>) -> Result<Self> {
        if rel.is_empty() {
            return Err(NormError::EmptyBatch);
        }
        let n = rel.len() as f64;
        let mean = rel.iter().sum::<f64>() / n;
        let var = rel.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / n;
        Ok(Metrics {
            rel_l2: mean,
            rel_l2_std: var.sqrt(),
            mme: max.iter().sum::<f64>() / n,
            per_sample_rel_l2: rel,
            per_sample_max_error: max,
        })
    }
}
