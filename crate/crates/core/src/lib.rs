//! Neural operators on meshed Riemannian manifolds.
//!
//! The crate assembles Laplace-Beltrami operators on triangle and tetrahedral
//! meshes, computes truncated spectral bases (LBO eigenfunctions, POD modes,
//! real Fourier modes), and trains spectral neural operators whose hidden
//! layers mix channels per mode in those bases.

pub mod datagen;
pub mod dense;
pub mod error;
pub mod field;
pub mod mesh;
pub mod operator;
pub mod sparse;
pub mod spectral;
pub mod training;
pub mod verify;

pub use error::{NormError, Result};
pub use field::{DomainId, Field};
pub use mesh::{CellKind, Mesh};
pub use sparse::SparseSymMatrix;
pub use spectral::{BasisKind, SpectralBasis};
