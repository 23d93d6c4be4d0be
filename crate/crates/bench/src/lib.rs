//! Benchmark fixtures shared by the criterion targets.

use std::sync::Arc;

use norm_core::datagen::{make_heat_dataset, Dataset};
use norm_core::mesh::unit_square_grid;
use norm_core::operator::{build_model, ModelSpec, NormModel};
use norm_core::spectral::lbo_basis_for_mesh;

/// Heat dataset on the `n x n` grid with a model of the given size bound to
/// a `modes`-mode LBO basis.
pub fn model_fixture(n: usize, modes: usize, width: usize, layers: usize, samples: usize) -> (NormModel, Dataset) {
    let mesh = unit_square_grid(n).expect("grid mesh");
    let data = make_heat_dataset(&mesh, samples, 0.05, 0).expect("heat data");
    let basis = Arc::new(lbo_basis_for_mesh(&mesh, modes).expect("lbo basis"));
    let mut spec = ModelSpec::new(1, 1);
    spec.width = width;
    spec.layers = layers;
    let model = build_model(&spec, basis.clone(), basis).expect("model");
    (model, data)
}
