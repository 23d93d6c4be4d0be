use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::adam::{adam_step, AdamState};
use super::metrics::{max_error, rel_l2, Metrics};
use super::normalize::{fit_normalizer, NormalizationMode};
use crate::datagen::{Dataset, Split};
use crate::field::Field;
use crate::operator::NormModel;
use crate::{NormError, Result};


#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LrSchedule {
    Constant,
    /// Halve the learning rate every `every` epochs.
    StepHalving { every: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub lr_schedule: LrSchedule,
    pub seed: u64,
    pub normalization: NormalizationMode,
    pub weight_decay: f64,
    /// Evaluate on the test split every this many epochs (and after the last).
    pub eval_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 500,
            batch_size: 20,
            learning_rate: 1e-3,
            lr_schedule: LrSchedule::StepHalving { every: 100 },
            seed: 0,
            normalization: NormalizationMode::GlobalPerChannel,
            weight_decay: 0.0,
            eval_every: 10,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || !(self.learning_rate > 0.0) || self.eval_every == 0 {
            return Err(NormError::InvalidConfig(
                "epochs, batch size and eval interval must be positive, learning rate > 0".into(),
            ));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(NormError::InvalidConfig("weight decay must be non-negative".into()));
        }
        Ok(())
    }

    pub fn lr_at(&self, epoch: usize) -> f64 {
        match self.lr_schedule {
            LrSchedule::Constant => self.learning_rate,
            LrSchedule::StepHalving { every } if every > 0 => self.learning_rate * 0.5f64.powi((epoch / every) as i32),
            LrSchedule::StepHalving { .. } => self.learning_rate,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub test_rel_l2: Option<f64>,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct History {
    pub epochs: Vec<EpochRecord>,
}

impl History {
    pub fn final_test_rel_l2(&self) -> Option<f64> {
        self.epochs.iter().rev().find_map(|r| r.test_rel_l2)
    }
}

fn check_domains(model: &NormModel, data: &Dataset) -> Result<()> {
    if data.input_domain() != model.input_domain_id() {
        return Err(NormError::DomainMismatch(format!(
            "dataset inputs live on {}, model expects {}",
            data.input_domain(),
            model.input_domain_id()
        )));
    }
    if data.output_domain() != model.output_domain_id() {
        return Err(NormError::DomainMismatch(format!(
            "dataset outputs live on {}, model produces {}",
            data.output_domain(),
            model.output_domain_id()
        )));
    }
    Ok(())
}

/// Relative L2 loss of one sample and its gradient with respect to `pred`,
/// scaled by `weight`.
fn rel_l2_with_grad(pred: &Field, target: &Field, weight: f64) -> Result<(f64, Field)> {
    let loss = rel_l2(pred, target)?;
    let num: f64 = pred.values().iter().zip(target.values()).map(|(p, t)| (p - t) * (p - t)).sum::<f64>().sqrt();
    let den: f64 = target.norm();
    let mut g = pred.clone();
    let scale = if num > 0.0 { weight / (num * den) } else { 0.0 };
    for (gv, t) in g.values_mut().iter_mut().zip(target.values()) {
        *gv = (*gv - t) * scale;
    }
    Ok((loss, g))
}

/// Mean relative L2 loss over a batch and its parameter gradient.
/// `ids` names the dataset index of every sample for error reports.
pub(crate) fn batch_loss_grad(
    model: &NormModel,
    inputs: &[&Field],
    targets: &[&Field],
    ids: &[usize],
    epoch: usize,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let w = 1.0 / inputs.len() as f64;
    let mut losses = Vec::with_capacity(inputs.len());
    let mut total = vec![0.0; model.param_count()];
    let micro = model.micro_batch();
    for (start, chunk) in (0..inputs.len()).step_by(micro).zip(inputs.chunks(micro)) {
        let (preds, tape) = model.forward_with_tape(chunk)?;
        let mut grads = Vec::with_capacity(chunk.len());
        for (k, p) in preds.iter().enumerate() {
            let (l, g) = rel_l2_with_grad(p, targets[start + k], w)?;
            if !l.is_finite() {
                return Err(NormError::NonFiniteLoss { sample: ids[start + k], epoch });
            }
            losses.push(l);
            grads.push(g);
        }
        let refs: Vec<&Field> = grads.iter().collect();
        let g = model.backward_tape(&tape, &refs)?;
        if let Some(i) = g.params.iter().position(|v| !v.is_finite()) {
            log::error!("non-finite gradient in parameter {i}");
            return Err(NormError::NonFiniteLoss { sample: ids[start], epoch });
        }
        total.iter_mut().zip(&g.params).for_each(|(t, v)| *t += v);
    }
    Ok((losses, total))
}

/// Fits the normalisers on the training split, then minimises the mean
/// per-sample relative L2 error with Adam over shuffled minibatches.
pub fn train(model: &mut NormModel, data: &Dataset, cfg: &TrainConfig) -> Result<History> {
    cfg.validate()?;
    check_domains(model, data)?;
    if data.train.is_empty() {
        return Err(NormError::EmptyBatch);
    }
    for &i in &data.train {
        if !data.inputs[i].is_finite() || !data.outputs[i].is_finite() {
            log::error!("training sample {i} holds non-finite values");
            return Err(NormError::NonFiniteLoss { sample: i, epoch: 0 });
        }
    }
    let input_norm = fit_normalizer(&data.inputs_of(Split::Train), cfg.normalization)?;
    let output_norm = fit_normalizer(&data.outputs_of(Split::Train), cfg.normalization)?;
    model.set_normalizers(Some(input_norm), Some(output_norm))?;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order = data.train.clone();
    let mut adam = AdamState::new(model.param_count());
    let mut history = History::default();
    let start = Instant::now();
    for epoch in 0..cfg.epochs {
        let lr = cfg.lr_at(epoch);
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for ids in order.chunks(cfg.batch_size) {
            let inputs: Vec<&Field> = ids.iter().map(|&i| &data.inputs[i]).collect();
            let targets: Vec<&Field> = ids.iter().map(|&i| &data.outputs[i]).collect();
            let (losses, mut grads) = batch_loss_grad(model, &inputs, &targets, ids, epoch)?;
            loss_sum += losses.iter().sum::<f64>();
            if cfg.weight_decay > 0.0 {
                for (g, p) in grads.iter_mut().zip(model.params()) {
                    *g += cfg.weight_decay * p;
                }
            }
            adam_step(model.params_mut(), &grads, &mut adam, lr)?;
        }
        let train_loss = loss_sum / order.len() as f64;
        let last = epoch + 1 == cfg.epochs;
        let test_rel_l2 = if !data.test.is_empty() && ((epoch + 1) % cfg.eval_every == 0 || last) {
            Some(evaluate(model, data, Split::Test)?.rel_l2)
        } else {
            None
        };
        let seconds = start.elapsed().as_secs_f64();
        match test_rel_l2 {
            Some(t) => log::info!("epoch {:>5}  loss {train_loss:.4e}  test {t:.4e}  lr {lr:.2e}  {seconds:.1}s", epoch + 1),
            None => log::debug!("epoch {:>5}  loss {train_loss:.4e}  lr {lr:.2e}", epoch + 1),
        }
        history.epochs.push(EpochRecord { epoch: epoch + 1, train_loss, test_rel_l2, seconds });
    }
    Ok(history)
}

/// Metrics of `model` on one split, computed in the units of the dataset.
pub fn evaluate(model: &NormModel, data: &Dataset, split: Split) -> Result<Metrics> {
    check_domains(model, data)?;
    let ids = data.indices(split);
    if ids.is_empty() {
        return Err(NormError::EmptyBatch);
    }
    let mut rel = Vec::with_capacity(ids.len());
    let mut max = Vec::with_capacity(ids.len());
    for chunk in ids.chunks(model.micro_batch()) {
        let inputs: Vec<&Field> = chunk.iter().map(|&i| &data.inputs[i]).collect();
        let preds = model.forward_batch(&inputs)?;
        for (p, &i) in preds.iter().zip(chunk) {
            rel.push(rel_l2(p, &data.outputs[i])?);
            max.push(max_error(p, &data.outputs[i])?);
        }
    }
    Metrics::from_samples(rel, max)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradcheckEntry {
    pub index: usize,
    pub group: String,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradcheckReport {
    pub max_rel_error: f64,
    pub step: f64,
    pub entries: Vec<GradcheckEntry>,
}

/// Gradient scale below which errors are measured absolutely.
pub const GRADCHECK_FLOOR: f64 = 1e-12;

/// Compares the reverse-mode gradient of the relative L2 loss of one sample
/// with central differences on `n_params` seeded random parameters.
pub fn gradcheck(
    model: &NormModel,
    input: &Field,
    target: &Field,
    n_params: usize,
    step: f64,
    seed: u64,
) -> Result<GradcheckReport> {
    if !(step > 0.0) {
        return Err(NormError::InvalidConfig("finite-difference step must be positive".into()));
    }
    let (_, grads) = batch_loss_grad(model, &[input], &[target], &[0], 0)?;
    let loss = |m: &NormModel| -> Result<f64> { rel_l2(&m.forward(input)?, target) };
    let groups = model.param_groups();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut probe = model.clone();
    let count = n_params.min(model.param_count());
    let mut picks = rand::seq::index::sample(&mut rng, model.param_count(), count).into_vec();
    picks.sort_unstable();
    let mut pairs = Vec::with_capacity(count);
    for &i in &picks {
        let p0 = model.params()[i];
        probe.params_mut()[i] = p0 + step;
        let up = loss(&probe)?;
        probe.params_mut()[i] = p0 - step;
        let down = loss(&probe)?;
        probe.params_mut()[i] = p0;
        pairs.push((i, grads[i], (up - down) / (2.0 * step)));
    }
    // errors are relative to at least the largest sampled gradient
    let scale = pairs.iter().map(|&(_, a, n)| a.abs().max(n.abs())).fold(GRADCHECK_FLOOR, f64::max);
    let entries: Vec<GradcheckEntry> = pairs
        .into_iter()
        .map(|(index, analytic, numeric)| {
            let rel_error = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(scale);
            let group = groups.iter().find(|(_, r)| r.contains(&index)).map(|(n, _)| n.clone()).unwrap_or_default();
            GradcheckEntry { index, group, analytic, numeric, rel_error }
        })
        .collect();
    let max_rel_error = entries.iter().map(|e| e.rel_error).fold(0.0, f64::max);
    Ok(GradcheckReport { max_rel_error, step, entries })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::make_heat_dataset;
    use crate::mesh::unit_square_grid;
    use crate::operator::{build_model, Activation, ModelSpec};
    use crate::spectral::lbo_basis_for_mesh;
    use std::sync::Arc;

    fn identity_dataset(n: usize) -> (Dataset, Arc<crate::SpectralBasis>) {
        let mesh = unit_square_grid(8).unwrap();
        let heat = make_heat_dataset(&mesh, n, 0.0, 3).unwrap();
        let basis = Arc::new(lbo_basis_for_mesh(&mesh, 32).unwrap());
        (heat, basis)
    }

    fn small_spec() -> ModelSpec {
        let mut spec = ModelSpec::new(1, 1);
        spec.width = 16;
        spec.layers = 1;
        spec.q_hidden = None;
        spec
    }

    #[test]
    fn learns_identity() {
        let (data, basis) = identity_dataset(60);
        let mut model = build_model(&small_spec(), basis.clone(), basis).unwrap();
        let cfg = TrainConfig { epochs: 200, batch_size: 10, learning_rate: 1e-2, ..TrainConfig::default() };
        let hist = train(&mut model, &data, &cfg).unwrap();
        let final_err = hist.final_test_rel_l2().unwrap();
        assert!(final_err < 1e-2, "identity rel_l2 {final_err}");
        assert_eq!(hist.epochs.len(), 200);
        assert!(hist.epochs.windows(2).all(|w| w[0].epoch < w[1].epoch && w[0].seconds <= w[1].seconds));
    }

    #[test]
    fn training_is_deterministic() {
        let (data, basis) = identity_dataset(20);
        let cfg = TrainConfig { epochs: 3, batch_size: 4, ..TrainConfig::default() };
        let run = || {
            let mut m = build_model(&small_spec(), basis.clone(), basis.clone()).unwrap();
            let h = train(&mut m, &data, &cfg).unwrap();
            (m.params().to_vec(), h.final_test_rel_l2().unwrap().to_bits())
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn nan_sample_is_named() {
        let (data, basis) = identity_dataset(12);
        let mut bad = data.clone();
        bad.inputs[4].values_mut()[7] = f64::NAN;
        let mut model = build_model(&small_spec(), basis.clone(), basis).unwrap();
        let cfg = TrainConfig { epochs: 1, batch_size: 4, ..TrainConfig::default() };
        match train(&mut model, &bad, &cfg) {
            Err(NormError::NonFiniteLoss { sample, .. }) => assert_eq!(sample, 4),
            other => panic!("expected NonFiniteLoss, got {other:?}"),
        }
    }

    #[test]
    fn evaluate_reports_original_units() {
        let (data, basis) = identity_dataset(12);
        let mut model = build_model(&small_spec(), basis.clone(), basis).unwrap();
        let cfg = TrainConfig { epochs: 2, batch_size: 4, ..TrainConfig::default() };
        train(&mut model, &data, &cfg).unwrap();
        let m = evaluate(&model, &data, Split::Test).unwrap();
        let expect: Vec<f64> = data
            .test
            .iter()
            .map(|&i| rel_l2(&model.forward(&data.inputs[i]).unwrap(), &data.outputs[i]).unwrap())
            .collect();
        assert_eq!(m.per_sample_rel_l2, expect);
        let again = evaluate(&model, &data, Split::Test).unwrap();
        assert_eq!(m, again);
    }

    #[test]
    fn domain_mismatch_is_rejected() {
        let (data, _) = identity_dataset(6);
        let other = Arc::new(lbo_basis_for_mesh(&unit_square_grid(6).unwrap(), 16).unwrap());
        let mut model = build_model(&small_spec(), other.clone(), other).unwrap();
        let cfg = TrainConfig { epochs: 1, ..TrainConfig::default() };
        assert!(matches!(train(&mut model, &data, &cfg), Err(NormError::DomainMismatch(_))));
        assert!(matches!(evaluate(&model, &data, Split::Test), Err(NormError::DomainMismatch(_))));
    }

    #[test]
    fn invalid_config_is_rejected() {
        let bad = [
            TrainConfig { epochs: 0, ..TrainConfig::default() },
            TrainConfig { batch_size: 0, ..TrainConfig::default() },
            TrainConfig { learning_rate: 0.0, ..TrainConfig::default() },
        ];
        for cfg in bad {
            assert!(cfg.validate().is_err());
        }
    }

    #[test]
    fn step_halving_schedule() {
        let cfg = TrainConfig::default();
        assert_eq!(cfg.lr_at(0), 1e-3);
        assert_eq!(cfg.lr_at(99), 1e-3);
        assert_eq!(cfg.lr_at(100), 5e-4);
        assert_eq!(cfg.lr_at(250), 2.5e-4);
    }

    fn gradcheck_model(activation: Activation, q_hidden: Option<usize>) -> (crate::operator::NormModel, Field, Field) {
        let mesh = unit_square_grid(5).unwrap();
        let data = make_heat_dataset(&mesh, 2, 0.01, 1).unwrap();
        let basis = Arc::new(lbo_basis_for_mesh(&mesh, 8).unwrap());
        let mut spec = ModelSpec::new(1, 1);
        spec.width = 4;
        spec.layers = 2;
        spec.activation = activation;
        spec.q_hidden = q_hidden;
        spec.seed = 7;
        let model = build_model(&spec, basis.clone(), basis).unwrap();
        (model, data.inputs[0].clone(), data.outputs[0].clone())
    }

    #[test]
    fn gradcheck_linear_model() {
        let (model, a, u) = gradcheck_model(Activation::Identity, None);
        let r = gradcheck(&model, &a, &u, 30, 1e-6, 0).unwrap();
        assert_eq!(r.entries.len(), 30);
        assert!(r.max_rel_error <= 1e-9, "{}", r.max_rel_error);
    }

    #[test]
    fn gradcheck_gelu_model() {
        let (model, a, u) = gradcheck_model(Activation::Gelu, Some(8));
        let r = gradcheck(&model, &a, &u, 30, 1e-6, 0).unwrap();
        assert!(r.max_rel_error <= 1e-5, "{}", r.max_rel_error);
        assert!(r.entries.iter().all(|e| !e.group.is_empty()));
    }

    #[test]
    fn gradcheck_large_step_reports() {
        let (model, a, u) = gradcheck_model(Activation::Gelu, Some(8));
        let r = gradcheck(&model, &a, &u, 5, 1e-1, 0).unwrap();
        assert!(r.max_rel_error.is_finite());
        assert_eq!(r.step, 1e-1);
    }
}
