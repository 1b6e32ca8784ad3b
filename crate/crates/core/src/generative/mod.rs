//! The window flow-matching model, the autoregressive baseline, and their
//! training loops.

mod flow;
mod model;
mod toy;
mod train;

pub use flow::{
    coupled_source, euler_integrate, fm_loss, fm_loss_on_tape, fm_sample, fm_sample_encoded, gaussian_noise,
    interpolate, weighted_mse, SpatialWeightMap, DEFAULT_SAMPLE_STEPS, DEFAULT_WEIGHT_ALPHA, DEFAULT_WEIGHT_SIGMA,
};
pub use model::{
    time_embedding, ArModel, ArModelConfig, BlockKind, WindowModel, WindowModelConfig, STATE_CHANNELS,
    WINDOW_IN_CHANNELS,
};
pub(crate) use model::bind_frozen;
pub use toy::{moments, sample_toy, train_toy, GaussianTarget, PointVelocity};
pub use train::{
    ar_forward_on_tape, ar_step, context_channels, element_rng, fit, load_model, load_training_set, save_model,
    save_training_checkpoint, train_ar, train_paint, LossRecord, TrainConfig, TrainIo, TrainResult, Trainable,
};

/// Desk-scale window model: 32×32 grid, 8 history + 4 forecast frames,
/// 4×4 patches, width 64, four alternating blocks, two heads.
pub fn desk_window_config() -> WindowModelConfig {
    WindowModelConfig { grid: (32, 32), frames: 12, patch: 4, dim: 64, layers: 4, heads: 2, mlp_ratio: 4 }
}
