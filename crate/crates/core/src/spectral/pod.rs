use faer::Mat;

use super::{pseudo_inverse, BasisKind, SpectralBasis};
use crate::dense::{self, fix_sign};
use crate::field::{DomainId, Field};
use crate::{NormError, Result};

/// Singular values below this fraction of the largest count as zero.
const RANK_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy)]
pub struct PodOptions {
    /// Subtract the snapshot mean before the SVD and add it back on decode.
    pub center: bool,
}

impl Default for PodOptions {
    fn default() -> Self {
        PodOptions { center: true }
    }
}

/// Leading left singular vectors of the snapshot matrix. Every channel of
/// every snapshot is one column.
pub fn pod_basis(snapshots: &[Field], d_m: usize, opts: PodOptions) -> Result<SpectralBasis> {
    let first = snapshots.first().ok_or(NormError::TooFewSnapshots { needed: d_m.max(1), got: 0 })?;
    let n = first.n_nodes();
    let domain = first.domain_id;
    for (k, s) in snapshots.iter().enumerate() {
        if s.n_nodes() != n || s.domain_id != domain {
            return Err(NormError::DomainMismatch(format!("snapshot {k} lives on a different domain")));
        }
    }
    let cols: usize = snapshots.iter().map(|s| s.channels()).sum();
    if d_m == 0 || cols < d_m {
        return Err(NormError::TooFewSnapshots { needed: d_m.max(1), got: cols });
    }
    if d_m > n {
        return Err(NormError::InvalidModeCount(format!("{d_m} modes on {n} nodes")));
    }
    let mut x = Mat::<f64>::zeros(n, cols);
    let mut j = 0;
    for s in snapshots {
        for c in 0..s.channels() {
            for i in 0..n {
                x[(i, j)] = s.get(i, c);
            }
            j += 1;
        }
    }
    let mean = if opts.center {
        let mean: Vec<f64> = (0..n)
            .map(|i| (0..cols).map(|j| x[(i, j)]).sum::<f64>() / cols as f64)
            .collect();
        for j in 0..cols {
            for i in 0..n {
                x[(i, j)] -= mean[i];
            }
        }
        Some(mean)
    } else {
        None
    };
    let (u, sigma) = dense::thin_svd(x.as_ref())?;
    let top = sigma.first().copied().unwrap_or(0.0);
    if let Some(k) = (0..d_m).find(|&k| !(sigma.get(k).copied().unwrap_or(0.0) > RANK_TOL * top)) {
        return Err(NormError::RankDeficient(format!(
            "snapshot matrix has numerical rank {k} < {d_m} modes"
        )));
    }
    let mut modes = Mat::<f64>::zeros(n, d_m);
    for k in 0..d_m {
        let mut col: Vec<f64> = (0..n).map(|i| u[(i, k)]).collect();
        fix_sign(&mut col);
        for i in 0..n {
            modes[(i, k)] = col[i];
        }
    }
    let pinv = pseudo_inverse(modes.as_ref())?;
    let mut bytes = Vec::with_capacity(n * cols * 8);
    for j in 0..cols {
        for i in 0..n {
            bytes.extend_from_slice(&x[(i, j)].to_le_bytes());
        }
    }
    let source = DomainId::hash_bytes(&[b"pod", &domain.0, &bytes]);
    Ok(SpectralBasis::from_parts(
        BasisKind::Pod,
        modes.as_ref(),
        pinv.as_ref(),
        sigma[..d_m].to_vec(),
        source,
        mean,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::{decode, encode};

    fn indicator(n: usize, i: usize) -> Field {
        let mut v = vec![0.0; n];
        v[i] = 1.0;
        Field::scalar(v, DomainId::default())
    }

    #[test]
    fn indicator_snapshots_are_reconstructed() {
        let snaps = vec![indicator(4, 0), indicator(4, 1)];
        let b = pod_basis(&snaps, 2, PodOptions { center: false }).unwrap();
        for s in &snaps {
            let back = decode(&b, encode(&b, s).unwrap().as_ref()).unwrap();
            assert!(back.max_abs_diff(s) < 1e-10);
        }
        assert!((b.values()[0] - 1.0).abs() < 1e-12);
        assert!((b.values()[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn repeated_snapshot() {
        let f = Field::scalar(vec![1.0, 2.0, -1.0], DomainId::default());
        let snaps = vec![f.clone(), f.clone(), f.clone()];
        assert!(matches!(
            pod_basis(&snaps, 1, PodOptions { center: true }),
            Err(NormError::RankDeficient(_))
        ));
        let b = pod_basis(&snaps, 1, PodOptions { center: false }).unwrap();
        let nf = f.norm();
        let cos: f64 = b.mode(0).iter().zip(f.values()).map(|(a, b)| a * b).sum::<f64>() / nf;
        assert!((cos.abs() - 1.0).abs() < 1e-12);
        assert!(matches!(
            pod_basis(&snaps, 2, PodOptions { center: false }),
            Err(NormError::RankDeficient(_))
        ));
    }

    #[test]
    fn too_few_snapshots() {
        let snaps = vec![indicator(5, 0)];
        assert!(matches!(
            pod_basis(&snaps, 2, PodOptions::default()),
            Err(NormError::TooFewSnapshots { needed: 2, got: 1 })
        ));
    }

    #[test]
    fn held_out_error_non_increasing() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        let n = 30;
        let snaps: Vec<Field> = (0..20)
            .map(|_| {
                let a: [f64; 4] = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
                Field::scalar(
                    (0..n)
                        .map(|i| {
                            let x = i as f64 / n as f64;
                            a[0] + a[1] * x + a[2] * (3.0 * x).sin() + a[3] * (7.0 * x).cos() + 0.01 * rng.random_range(-1.0..1.0)
                        })
                        .collect(),
                    DomainId::default(),
                )
            })
            .collect();
        let held = &snaps[19];
        let mut prev = f64::INFINITY;
        for d in 1..=10 {
            let b = pod_basis(&snaps[..19], d, PodOptions::default()).unwrap();
            let rec = decode(&b, encode(&b, held).unwrap().as_ref()).unwrap();
            let err = rec.axpy(-1.0, held).unwrap().norm();
            assert!(err <= prev + 1e-12, "d={d}: {err} > {prev}");
            prev = err;
        }
    }
}
