//! Stage-1 motion priors: body-part layout, rotations and per-part VQ-VAEs.

pub mod layout;
pub mod rotation;
pub mod train;
pub mod vq;

pub use layout::{MotionSequence, Part, FULL_DIM};
pub use train::{codebook_utilization, mean_abs_acceleration, train_vqvae, EpochStats, Stage1Config, VqTrainConfig, VqTrainLog};
pub use vq::{quantize, vq_loss, VqConfig, VqModel, VqTerms, DOWNSAMPLE, VQ_MAGIC};
