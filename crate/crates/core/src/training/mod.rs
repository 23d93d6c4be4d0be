//! Losses, metrics, the Adam optimiser, normalisation and the training loop.

mod adam;
mod metrics;
mod normalize;
mod sweep;
mod train;

pub use adam::{adam_step, AdamState};
pub use metrics::{max_error, mme_batch, rel_l2, Metrics};
pub use normalize::{fit_normalizer, NormalizationMode, Normalizer, MIN_STD};
pub use sweep::{pod_basis_from_inputs, sweep, write_sweep_csv, SweepConfig, SweepKind, SweepRow};
pub use train::{
    evaluate, gradcheck, train, EpochRecord, GradcheckEntry, GradcheckReport, History, LrSchedule, TrainConfig,
    GRADCHECK_FLOOR,
};
