//! Frequency-sampled training of FDN parameters.

pub mod adam;
pub mod grad;
pub mod grid;
pub mod init;
pub mod loss;
pub mod train;

pub use adam::{adam_step, Adam, AdamConfig};
pub use grad::{evaluate_loss, loss_gradients, pack_params, unpack_params, Gradients, LossOptions};
pub use grid::{batch_sampler, frequency_grid, split_indices, BatchSampler, Split};
pub use init::{design_delays, init_params, initial_config, InitParams};
pub use loss::{sparsity_loss, spectral_loss, total_loss, LossBreakdown};
pub use train::{train, train_with, EpochRecord, TrainConfig, TrainReport};
