//! Checkpoint directory: `model.json` (architecture, basis metadata,
//! normalisers), `params.bin` (magic `NORMCK1\0`, `u64` count, `f64` LE
//! parameters in declaration order) and one `basis_<i>.nsb` per basis slot.

use std::fs;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::model::{Architecture, NormModel};
use crate::field::DomainId;
use crate::spectral::{read_basis_file, write_basis_file};
use crate::training::Normalizer;
use crate::{NormError, Result};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"NORMCK1\0";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct BasisEntry {
    file: String,
    kind: String,
    source_id: DomainId,
    n_x: usize,
    d_m: usize,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    format_version: u32,
    architecture: Architecture,
    param_count: usize,
    bases: Vec<BasisEntry>,
    input_domain: DomainId,
    output_domain: DomainId,
    input_normalizer: Option<Normalizer>,
    output_normalizer: Option<Normalizer>,
}

pub fn save_checkpoint(model: &NormModel, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| NormError::io(dir, e))?;
    let mut bases = Vec::new();
    for (i, b) in model.bases().iter().enumerate() {
        let file = format!("basis_{i}.nsb");
        write_basis_file(b, dir.join(&file))?;
        bases.push(BasisEntry {
            file,
            kind: b.kind().name().into(),
            source_id: b.source_id(),
            n_x: b.n_x(),
            d_m: b.d_m(),
        });
    }
    let manifest = Manifest {
        format_version: CHECKPOINT_VERSION,
        architecture: model.architecture().clone(),
        param_count: model.param_count(),
        bases,
        input_domain: model.input_domain_id(),
        output_domain: model.output_domain_id(),
        input_normalizer: model.input_normalizer().cloned(),
        output_normalizer: model.output_normalizer().cloned(),
    };
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    let path = dir.join("model.json");
    fs::write(&path, json).map_err(|e| NormError::io(&path, e))?;
    let mut bin = Vec::with_capacity(16 + 8 * model.param_count());
    bin.extend_from_slice(CHECKPOINT_MAGIC);
    bin.extend_from_slice(&(model.param_count() as u64).to_le_bytes());
    for p in model.params() {
        bin.extend_from_slice(&p.to_le_bytes());
    }
    let path = dir.join("params.bin");
    fs::write(&path, bin).map_err(|e| NormError::io(&path, e))
}

pub fn load_checkpoint(dir: impl AsRef<Path>) -> Result<NormModel> {
    let dir = dir.as_ref();
    let path = dir.join("model.json");
    let text = fs::read_to_string(&path).map_err(|e| NormError::io(&path, e))?;
    let manifest: Manifest =
        serde_json::from_str(&text).map_err(|e| NormError::Format(format!("model.json: {e}")))?;
    if manifest.format_version != CHECKPOINT_VERSION {
        return Err(NormError::Format(format!(
            "unsupported checkpoint version {}",
            manifest.format_version
        )));
    }
    let mut bases = Vec::with_capacity(manifest.bases.len());
    for entry in &manifest.bases {
        let b = read_basis_file(dir.join(&entry.file))?;
        if b.source_id() != entry.source_id || b.n_x() != entry.n_x || b.d_m() != entry.d_m {
            return Err(NormError::Format(format!("{} does not match model.json", entry.file)));
        }
        bases.push(Arc::new(b));
    }
    let mut model = NormModel::new(manifest.architecture, bases)?;
    let path = dir.join("params.bin");
    let bin = fs::read(&path).map_err(|e| NormError::io(&path, e))?;
    if bin.len() < 16 || &bin[..8] != CHECKPOINT_MAGIC {
        return Err(NormError::Format("params.bin has an unknown header".into()));
    }
    let count = u64::from_le_bytes(bin[8..16].try_into().unwrap()) as usize;
    if count != manifest.param_count || count != model.param_count() || bin.len() != 16 + 8 * count {
        return Err(NormError::Format(format!(
            "params.bin holds {count} parameters, architecture needs {}",
            model.param_count()
        )));
    }
    let params = bin[16..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    model.set_params(params)?;
    model.set_normalizers(manifest.input_normalizer, manifest.output_normalizer)?;
    if model.input_domain_id() != manifest.input_domain || model.output_domain_id() != manifest.output_domain {
        return Err(NormError::Format("checkpoint domains do not match its bases".into()));
    }
    Ok(model)
}
