use faer::Mat;

use super::darcy::sample_rng;
use super::dataset::{Dataset, Provenance};
use super::grf::{grf_sample, GrfSpec};
use crate::dense::{gemm, row_major, row_major_mut};
use crate::field::Field;
use crate::mesh::Mesh;
use crate::spectral::{lbo_basis_for_mesh, SpectralBasis};
use crate::{NormError, Result};

/// Upper bound on the number of modes used to evaluate the heat semigroup.
pub const MAX_FULL_MODES: usize = 512;

/// Input distribution of heat datasets.
pub const HEAT_GRF: GrfSpec = GrfSpec { shift: 25.0, power: 1 };

/// `Σ exp(-t λ_i) (Φ†a)_i φ_i` over every mode of `full_basis`.
pub fn heat_semigroup_target(full_basis: &SpectralBasis, a: &Field, t: f64) -> Result<Field> {
    if !(t >= 0.0) {
        return Err(NormError::InvalidConfig(format!("heat time must be non-negative, got {t}")));
    }
    if a.n_nodes() != full_basis.n_x() {
        return Err(NormError::DimensionMismatch(format!(
            "basis has {} nodes, field has {}",
            full_basis.n_x(),
            a.n_nodes()
        )));
    }
    let ch = a.channels();
    let mut c = Mat::<f64>::zeros(full_basis.d_m(), ch);
    gemm(c.as_mut(), full_basis.pinv(), row_major(a.values(), a.n_nodes(), ch), false);
    for (k, &lam) in full_basis.values().iter().enumerate() {
        let decay = (-t * lam.max(0.0)).exp();
        for j in 0..ch {
            c[(k, j)] *= decay;
        }
    }
    let mut values = vec![0.0; a.n_nodes() * ch];
    gemm(row_major_mut(&mut values, a.n_nodes(), ch), full_basis.modes(), c.as_ref(), false);
    Field::new(a.n_nodes(), ch, values, a.domain_id)
}

/// LBO basis with `min(n_x, 512)` modes used as ground truth for heat data.
pub fn heat_full_basis(mesh: &Mesh) -> Result<SpectralBasis> {
    lbo_basis_for_mesh(mesh, mesh.n_vertices().min(MAX_FULL_MODES))
}

pub fn make_heat_dataset(mesh: &Mesh, n: usize, t: f64, seed: u64) -> Result<Dataset> {
    make_heat_dataset_with_basis(&heat_full_basis(mesh)?, n, t, seed)
}

/// `n` pairs `(a_i, exp(-tΔ) a_i)` with `a_i` drawn from [`HEAT_GRF`] over
/// the full basis.
pub fn make_heat_dataset_with_basis(full: &SpectralBasis, n: usize, t: f64, seed: u64) -> Result<Dataset> {
    let mut inputs = Vec::with_capacity(n);
    let mut outputs = Vec::with_capacity(n);
    for i in 0..n {
        let a = grf_sample(full, &HEAT_GRF, &mut sample_rng(seed, i))?;
        outputs.push(heat_semigroup_target(full, &a, t)?);
        inputs.push(a);
    }
    let provenance = Provenance {
        generator: "heat".into(),
        seed,
        params: serde_json::json!({
            "n_samples": n,
            "t": t,
            "mesh": full.source_id(),
            "n_nodes": full.n_x(),
            "full_modes": full.d_m(),
            "grf_shift": HEAT_GRF.shift,
            "grf_power": HEAT_GRF.power,
        }),
    };
    Dataset::new(inputs, outputs, provenance)
}
