use std::io::Write;
use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::train::{evaluate, train, TrainConfig};
use crate::datagen::{Dataset, Split};
use crate::operator::{build_model, ModelSpec};
use crate::spectral::{pod_basis, PodOptions, SpectralBasis};
use crate::{NormError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepKind {
    /// Vary the number of spectral modes.
    Modes,
    /// Vary the number of training samples.
    DataSize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub kind: SweepKind,
    pub grid: Vec<usize>,
    pub model: ModelSpec,
    pub train: TrainConfig,
    /// Repeat every grid point with a POD basis of the training inputs.
    pub compare_pod: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub basis: String,
    pub value: usize,
    pub rel_l2: f64,
    pub mme: f64,
    pub seconds: f64,
}

/// Uncentered POD basis of the training inputs, tagged with the input domain.
pub fn pod_basis_from_inputs(data: &Dataset, d_m: usize) -> Result<SpectralBasis> {
    let snaps: Vec<_> = data.inputs_of(Split::Train).into_iter().cloned().collect();
    Ok(pod_basis(&snaps, d_m, PodOptions { center: false })?.with_source_id(data.input_domain()))
}

/// Trains one fresh model per grid point on a same-manifold dataset and
/// reports test metrics. `lbo` must hold at least as many modes as any
/// grid value of a modes sweep.
pub fn sweep(cfg: &SweepConfig, data: &Dataset, lbo: &SpectralBasis) -> Result<Vec<SweepRow>> {
    if cfg.grid.is_empty() {
        return Err(NormError::InvalidConfig("sweep grid is empty".into()));
    }
    let mut rows = Vec::new();
    let bases: &[&str] = if cfg.compare_pod { &["lbo", "pod"] } else { &["lbo"] };
    for &which in bases {
        for &value in &cfg.grid {
            let start = Instant::now();
            let (d_m, sub) = match cfg.kind {
                SweepKind::Modes => (value, data.clone()),
                SweepKind::DataSize => (cfg.model.modes.unwrap_or(lbo.d_m()).min(lbo.d_m()), data.with_train_size(value)?),
            };
            let basis = match which {
                "lbo" => lbo.truncate(d_m)?,
                _ => pod_basis_from_inputs(&sub, d_m)?,
            };
            let basis = Arc::new(basis);
            let mut spec = cfg.model.clone();
            spec.modes = None;
            let mut model = build_model(&spec, basis.clone(), basis)?;
            train(&mut model, &sub, &cfg.train)?;
            let m = evaluate(&model, &sub, Split::Test)?;
            let seconds = start.elapsed().as_secs_f64();
            log::info!("{which} {value}: rel_l2 {:.4e} mme {:.4e} ({seconds:.1}s)", m.rel_l2, m.mme);
            rows.push(SweepRow { basis: which.to_string(), value, rel_l2: m.rel_l2, mme: m.mme, seconds });
        }
    }
    Ok(rows)
}

pub fn write_sweep_csv(rows: &[SweepRow], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::from("basis,value,rel_l2,mme,seconds\n");
    for r in rows {
        out.push_str(&format!("{},{},{:.10e},{:.10e},{:.3}\n", r.basis, r.value, r.rel_l2, r.mme, r.seconds));
    }
    let mut f = std::fs::File::create(path).map_err(|e| NormError::io(path, e))?;
    f.write_all(out.as_bytes()).map_err(|e| NormError::io(path, e))
}
