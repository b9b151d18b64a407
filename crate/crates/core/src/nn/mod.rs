//! Multilayer perceptron with batch norm, dropout, masked softmax and Adam.

pub mod adam;
pub mod checkpoint;
pub mod loss;
pub mod mlp;
pub mod train;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use loss::{masked_cross_entropy, masked_softmax, OutputMask};
pub use mlp::{default_dims, BatchNorm, Dense, Mlp, MlpGrads, Mode, DEFAULT_HIDDEN};
pub use train::{evaluate, predict_classes, train_task, MaskPlan, TrainConfig};
