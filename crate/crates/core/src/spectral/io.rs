//! Binary basis cache: magic `NORMSB1\0`, little-endian `u32` kind, `u64`
//! n_x, `u64` d_m, `f64` values, `f64` Φ row-major, `f64` Φ† row-major, the
//! 32-byte source id, and for centred POD bases (kind 3) the `f64` mean.

use std::fs;
use std::path::Path;

use faer::Mat;

use super::{BasisKind, SpectralBasis};
use crate::field::DomainId;
use crate::{NormError, Result};

pub const BASIS_MAGIC: &[u8; 8] = b"NORMSB1\0";

fn kind_code(b: &SpectralBasis) -> u32 {
    match (b.kind(), b.mean().is_some()) {
        (BasisKind::Lbo, _) => 0,
        (BasisKind::Pod, false) => 1,
        (BasisKind::Fourier, _) => 2,
        (BasisKind::Pod, true) => 3,
    }
}

pub fn write_basis(b: &SpectralBasis) -> Vec<u8> {
    let (n, d) = (b.n_x(), b.d_m());
    let mut out = Vec::with_capacity(8 + 20 + 8 * (d + 2 * n * d + n) + 32);
    out.extend_from_slice(BASIS_MAGIC);
    out.extend_from_slice(&kind_code(b).to_le_bytes());
    out.extend_from_slice(&(n as u64).to_le_bytes());
    out.extend_from_slice(&(d as u64).to_le_bytes());
    for v in b.values() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    let phi = b.modes();
    for i in 0..n {
        for j in 0..d {
            out.extend_from_slice(&phi[(i, j)].to_le_bytes());
        }
    }
    let pinv = b.pinv();
    for i in 0..d {
        for j in 0..n {
            out.extend_from_slice(&pinv[(i, j)].to_le_bytes());
        }
    }
    out.extend_from_slice(&b.source_id().0);
    if let Some(mean) = b.mean() {
        for v in mean {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, k: usize) -> Result<&'a [u8]> {
        if self.pos + k > self.buf.len() {
            return Err(NormError::Format("basis file truncated".into()));
        }
        let s = &self.buf[self.pos..self.pos + k];
        self.pos += k;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64s(&mut self, k: usize) -> Result<Vec<f64>> {
        let raw = self.take(k.checked_mul(8).ok_or_else(|| NormError::Format("size overflow".into()))?)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}

pub fn read_basis(buf: &[u8]) -> Result<SpectralBasis> {
    let mut cur = Cursor { buf, pos: 0 };
    let magic = cur.take(8)?;
    if magic != BASIS_MAGIC {
        if magic.starts_with(b"NORMSB") {
            return Err(NormError::Format(format!(
                "unsupported basis file version {:?}",
                magic[6] as char
            )));
        }
        return Err(NormError::Format("not a basis file".into()));
    }
    let code = cur.u32()?;
    let (kind, has_mean) = match code {
        0 => (BasisKind::Lbo, false),
        1 => (BasisKind::Pod, false),
        2 => (BasisKind::Fourier, false),
        3 => (BasisKind::Pod, true),
        other => return Err(NormError::Format(format!("unknown basis kind {other}"))),
    };
    let n = cur.u64()? as usize;
    let d = cur.u64()? as usize;
    let values = cur.f64s(d)?;
    let phi_rm = cur.f64s(n * d)?;
    let pinv_rm = cur.f64s(n * d)?;
    let id: [u8; 32] = cur.take(32)?.try_into().unwrap();
    let mean = if has_mean { Some(cur.f64s(n)?) } else { None };
    if cur.pos != buf.len() {
        return Err(NormError::Format("trailing bytes after basis".into()));
    }
    let phi = Mat::from_fn(n, d, |i, j| phi_rm[i * d + j]);
    let pinv = Mat::from_fn(d, n, |i, j| pinv_rm[i * n + j]);
    Ok(SpectralBasis::from_parts(kind, phi.as_ref(), pinv.as_ref(), values, DomainId(id), mean))
}

pub fn write_basis_file(b: &SpectralBasis, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, write_basis(b)).map_err(|e| NormError::io(path, e))
}

pub fn read_basis_file(path: impl AsRef<Path>) -> Result<SpectralBasis> {
    let path = path.as_ref();
    let buf = fs::read(path).map_err(|e| NormError::io(path, e))?;
    read_basis(&buf)
}
