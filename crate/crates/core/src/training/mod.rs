//! Masked-pixel pretraining: masking, the objective, Adam, the learning-rate
//! schedule and the epoch loop.

mod loss;
mod mask;
mod optim;
mod pretrain;

pub use loss::{bert_loss, image_loss, mask_targets, BertBatch, LossValue};
pub use mask::{sample_mask, MaskSample};
pub use optim::{Adam, AdamConfig, LrSchedule};
pub use pretrain::{metrics_csv, EpochMetrics, TrainConfig, TrainState, Trainer};
