//! The NORM model: pointwise lifting `P`, stacked spectral layers, pointwise
//! projection `Q`, with exact reverse-mode gradients.
//!
//! A spectral layer encodes its input with `Φ_in†`, mixes channels per mode
//! with `R`, decodes with `Φ_out`, and adds a pointwise affine skip path.

mod checkpoint;
mod kernels;
mod layer;
mod model;

pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use kernels::Activation;
pub use layer::{l_layer_forward, spectral_block, LLayerParams};
pub use model::{
    backward, build_model, forward, param_count, Architecture, BatchGradients, Gradients, LayerDesc, LayerKind,
    ModelSpec, NormModel, Tape, Wiring, MICRO_BATCH_VALUES,
};

#[cfg(test)]
mod tests;
