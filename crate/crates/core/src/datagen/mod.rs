//! Synthetic operator-learning datasets: Darcy flow with a thresholded GRF
//! coefficient, and the heat semigroup whose ground truth is spectral.

mod darcy;
mod dataset;
mod grf;
mod heat;

pub use darcy::{darcy_solve, make_darcy_dataset, DarcyOptions, DirichletBc, SOLVE_TOL};
pub use dataset::{default_split, read_dataset, write_dataset, Dataset, Provenance, Split, DATASET_MAGIC, SPATIAL_MAJOR};
pub use grf::{grf_sample, threshold_coefficient, GrfSpec};
pub use heat::{
    heat_full_basis, heat_semigroup_target, make_heat_dataset, make_heat_dataset_with_basis, HEAT_GRF, MAX_FULL_MODES,
};
