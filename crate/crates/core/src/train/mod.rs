//! Losses, optimiser, metrics, supervised training and self-supervised pretraining.

mod loss;
mod metrics;
mod optim;
pub mod ssl;
mod trainer;

pub use loss::{balanced_class_weights, cross_entropy, total_loss, LossTerms};
pub use metrics::{argmax, metrics, MetricsReport};
pub use optim::{cosine_lr, Adam, AdamConfig};
pub use ssl::{freeze_embed, ssl_pretrain, ssl_transform, SslConfig, SslHeads, SslKind};
pub use trainer::{evaluate, predict, stratified_split, train, EpochRecord, TrainConfig, TrainOutcome};
