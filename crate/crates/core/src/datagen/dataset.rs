//! Labelled input/output pairs and the `.nds` file format: magic
//! `NORMDS1\0`, `u64` header length, UTF-8 JSON header, then all inputs and
//! all outputs as little-endian `f64`, each sample row-major
//! (node-major, channel fastest).

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::field::{DomainId, Field};
use crate::{NormError, Result};

pub const DATASET_MAGIC: &[u8; 8] = b"NORMDS1\0";

/// Flattening of space-time outputs: row `t * n_y + y`.
pub const SPATIAL_MAJOR: &str = "spatial-major";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub generator: String,
    pub seed: u64,
    pub params: serde_json::Value,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub inputs: Vec<Field>,
    pub outputs: Vec<Field>,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
    pub provenance: Provenance,
    pub layout: String,
}

#[derive(Serialize, Deserialize)]
struct Shape {
    n_nodes: usize,
    channels: usize,
    domain_id: DomainId,
}

#[derive(Serialize, Deserialize)]
struct Header {
    n_samples: usize,
    input: Shape,
    output: Shape,
    train: Vec<usize>,
    test: Vec<usize>,
    layout: String,
    provenance: Provenance,
}

/// Five-to-one train/test split in index order: the last `n / 6` samples
/// (at least one when `n >= 2`) form the test set.
pub fn default_split(n: usize) -> (Vec<usize>, Vec<usize>) {
    let n_test = if n >= 2 { (n / 6).max(1) } else { 0 };
    ((0..n - n_test).collect(), (n - n_test..n).collect())
}

impl Dataset {
    /// Validates shapes, domains and the split; uses [`default_split`].
    pub fn new(inputs: Vec<Field>, outputs: Vec<Field>, provenance: Provenance) -> Result<Self> {
        let (train, test) = default_split(inputs.len());
        Self::with_split(inputs, outputs, train, test, provenance)
    }

    pub fn with_split(
        inputs: Vec<Field>,
        outputs: Vec<Field>,
        train: Vec<usize>,
        test: Vec<usize>,
        provenance: Provenance,
    ) -> Result<Self> {
        if inputs.is_empty() {
            return Err(NormError::EmptyBatch);
        }
        if inputs.len() != outputs.len() {
            return Err(NormError::ShapeMismatch(format!(
                "{} inputs but {} outputs",
                inputs.len(),
                outputs.len()
            )));
        }
        for set in [&inputs, &outputs] {
            let f0 = &set[0];
            for (i, f) in set.iter().enumerate() {
                if !f.same_shape(f0) {
                    return Err(NormError::ShapeMismatch(format!("sample {i} differs in shape from sample 0")));
                }
                if f.domain_id != f0.domain_id {
                    return Err(NormError::DomainMismatch(format!("sample {i} lives on a different domain")));
                }
            }
        }
        let n = inputs.len();
        let mut seen = vec![false; n];
        for &i in train.iter().chain(&test) {
            if i >= n || seen[i] {
                return Err(NormError::InvalidConfig(format!(
                    "split index {i} is out of range or repeated (n = {n})"
                )));
            }
            seen[i] = true;
        }
        Ok(Dataset { inputs, outputs, train, test, provenance, layout: SPATIAL_MAJOR.into() })
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn input_domain(&self) -> DomainId {
        self.inputs[0].domain_id
    }

    pub fn output_domain(&self) -> DomainId {
        self.outputs[0].domain_id
    }

    pub fn indices(&self, split: Split) -> &[usize] {
        match split {
            Split::Train => &self.train,
            Split::Test => &self.test,
        }
    }

    pub fn inputs_of(&self, split: Split) -> Vec<&Field> {
        self.indices(split).iter().map(|&i| &self.inputs[i]).collect()
    }

    pub fn outputs_of(&self, split: Split) -> Vec<&Field> {
        self.indices(split).iter().map(|&i| &self.outputs[i]).collect()
    }

    /// Keeps only the first `n` training indices.
    pub fn with_train_size(&self, n: usize) -> Result<Dataset> {
        if n == 0 || n > self.train.len() {
            return Err(NormError::InvalidConfig(format!(
                "training size {n} outside 1..={}",
                self.train.len()
            )));
        }
        let mut d = self.clone();
        d.train.truncate(n);
        Ok(d)
    }

    pub fn check_finite(&self) -> Result<()> {
        for (i, (a, u)) in self.inputs.iter().zip(&self.outputs).enumerate() {
            if !a.is_finite() || !u.is_finite() {
                return Err(NormError::Format(format!("sample {i} contains non-finite values")));
            }
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        self.check_finite()?;
        let shape = |f: &Field| Shape { n_nodes: f.n_nodes(), channels: f.channels(), domain_id: f.domain_id };
        let header = Header {
            n_samples: self.len(),
            input: shape(&self.inputs[0]),
            output: shape(&self.outputs[0]),
            train: self.train.clone(),
            test: self.test.clone(),
            layout: self.layout.clone(),
            provenance: self.provenance.clone(),
        };
        let json = serde_json::to_vec(&header).expect("header serializes");
        let n_vals: usize = self.inputs.iter().chain(&self.outputs).map(|f| f.values().len()).sum();
        let mut out = Vec::with_capacity(16 + json.len() + 8 * n_vals);
        out.extend_from_slice(DATASET_MAGIC);
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for f in self.inputs.iter().chain(&self.outputs) {
            for v in f.values() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        if buf.len() < 16 || &buf[..8] != DATASET_MAGIC {
            if buf.len() >= 8 && buf.starts_with(b"NORMDS") {
                return Err(NormError::Format(format!("unsupported dataset version {:?}", buf[6] as char)));
            }
            return Err(NormError::Format("not a dataset file".into()));
        }
        let hlen = u64::from_le_bytes(buf[8..16].try_into().unwrap()) as usize;
        let body = buf
            .get(16..16usize.saturating_add(hlen))
            .ok_or_else(|| NormError::Format("dataset header truncated".into()))?;
        let h: Header = serde_json::from_slice(body).map_err(|e| NormError::Format(format!("dataset header: {e}")))?;
        let per_in = h.input.n_nodes * h.input.channels;
        let per_out = h.output.n_nodes * h.output.channels;
        let expected = h.n_samples * (per_in + per_out) * 8;
        let data = &buf[16 + hlen..];
        if data.len() != expected {
            return Err(NormError::Format(format!(
                "dataset payload has {} bytes, header implies {expected}",
                data.len()
            )));
        }
        let mut vals = data.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap()));
        let mut take = |n: usize, c: usize, id: DomainId| -> Result<Field> {
            Field::new(n, c, vals.by_ref().take(n * c).collect(), id)
        };
        let mut inputs = Vec::with_capacity(h.n_samples);
        for _ in 0..h.n_samples {
            inputs.push(take(h.input.n_nodes, h.input.channels, h.input.domain_id)?);
        }
        let mut outputs = Vec::with_capacity(h.n_samples);
        for _ in 0..h.n_samples {
            outputs.push(take(h.output.n_nodes, h.output.channels, h.output.domain_id)?);
        }
        let mut d = Dataset::with_split(inputs, outputs, h.train, h.test, h.provenance)?;
        d.layout = h.layout;
        d.check_finite()?;
        Ok(d)
    }
}

pub fn write_dataset(d: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, d.to_bytes()?).map_err(|e| NormError::io(path, e))
}

pub fn read_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let buf = fs::read(path).map_err(|e| NormError::io(path, e))?;
    Dataset::from_bytes(&buf)
}
