use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::{NormError, Result};

/// Content hash identifying a mesh, time grid or snapshot set.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct DomainId(pub [u8; 32]);

impl DomainId {
    pub fn hash_bytes(parts: &[&[u8]]) -> Self {
        let mut h = Sha256::new();
        for p in parts {
            h.update((p.len() as u64).to_le_bytes());
            h.update(p);
        }
        DomainId(h.finalize().into())
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    pub fn from_hex(s: &str) -> Result<Self> {
        let bytes = hex::decode(s).map_err(|e| NormError::Parse(format!("domain id: {e}")))?;
        let arr: [u8; 32] = bytes
            .try_into()
            .map_err(|_| NormError::Parse("domain id must be 32 bytes".into()))?;
        Ok(DomainId(arr))
    }

    /// Id of a uniform time grid with `n_t` nodes on [0, 1).
    pub fn time_grid(n_t: usize) -> Self {
        DomainId::hash_bytes(&[b"time-grid", &(n_t as u64).to_le_bytes()])
    }

    /// Id of the tensor-product domain `space x time`.
    pub fn space_time(space: DomainId, n_t: usize) -> Self {
        DomainId::hash_bytes(&[b"space-time", &space.0, &(n_t as u64).to_le_bytes()])
    }
}

impl fmt::Debug for DomainId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "DomainId({}…)", &self.to_hex()[..12])
    }
}

impl fmt::Display for DomainId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl Serialize for DomainId {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_hex())
    }
}

impl<'de> Deserialize<'de> for DomainId {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        DomainId::from_hex(&s).map_err(serde::de::Error::custom)
    }
}

/// Multi-channel nodal samples of a function, stored row-major
/// (`values[node * channels + channel]`).
#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    n_nodes: usize,
    channels: usize,
    values: Vec<f64>,
    pub domain_id: DomainId,
    pub channel_names: Vec<String>,
}

impl Field {
    pub fn new(n_nodes: usize, channels: usize, values: Vec<f64>, domain_id: DomainId) -> Result<Self> {
        if values.len() != n_nodes * channels {
            return Err(NormError::DimensionMismatch(format!(
                "field of {n_nodes}x{channels} needs {} values, got {}",
                n_nodes * channels,
                values.len()
            )));
        }
        Ok(Field {
            n_nodes,
            channels,
            values,
            domain_id,
            channel_names: Vec::new(),
        })
    }

    pub fn zeros(n_nodes: usize, channels: usize, domain_id: DomainId) -> Self {
        Field {
            n_nodes,
            channels,
            values: vec![0.0; n_nodes * channels],
            domain_id,
            channel_names: Vec::new(),
        }
    }

    pub fn from_fn(
        n_nodes: usize,
        channels: usize,
        domain_id: DomainId,
        mut f: impl FnMut(usize, usize) -> f64,
    ) -> Self {
        let mut values = Vec::with_capacity(n_nodes * channels);
        for i in 0..n_nodes {
            for c in 0..channels {
                values.push(f(i, c));
            }
        }
        Field {
            n_nodes,
            channels,
            values,
            domain_id,
            channel_names: Vec::new(),
        }
    }

    /// Single-channel field from nodal values.
    pub fn scalar(values: Vec<f64>, domain_id: DomainId) -> Self {
        let n = values.len();
        Field {
            n_nodes: n,
            channels: 1,
            values,
            domain_id,
            channel_names: Vec::new(),
        }
    }

    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn get(&self, node: usize, channel: usize) -> f64 {
        self.values[node * self.channels + channel]
    }

    pub fn set(&mut self, node: usize, channel: usize, v: f64) {
        self.values[node * self.channels + channel] = v;
    }

    pub fn channel(&self, c: usize) -> Vec<f64> {
        (0..self.n_nodes).map(|i| self.get(i, c)).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn check_finite(&self) -> Result<()> {
        match self.values.iter().position(|v| !v.is_finite()) {
            None => Ok(()),
            Some(k) => Err(NormError::Format(format!(
                "non-finite value at node {} channel {}",
                k / self.channels.max(1),
                k % self.channels.max(1)
            ))),
        }
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn same_shape(&self, other: &Field) -> bool {
        self.n_nodes == other.n_nodes && self.channels == other.channels
    }

    pub fn scaled(&self, alpha: f64) -> Field {
        let mut out = self.clone();
        out.values.iter_mut().for_each(|v| *v *= alpha);
        out
    }

    /// `self + alpha * other`.
    pub fn axpy(&self, alpha: f64, other: &Field) -> Result<Field> {
        if !self.same_shape(other) {
            return Err(NormError::DimensionMismatch(format!(
                "{}x{} vs {}x{}",
                self.n_nodes, self.channels, other.n_nodes, other.channels
            )));
        }
        let mut out = self.clone();
        for (o, v) in out.values.iter_mut().zip(&other.values) {
            *o += alpha * v;
        }
        Ok(out)
    }

    pub fn max_abs_diff(&self, other: &Field) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }
}
