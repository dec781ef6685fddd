//! Losses, configuration and the training loop.

pub mod config;
pub mod data;
pub mod losses;
pub mod trainer;

pub use config::{LossConfig, TrainConfig, ABLATIONS};
pub use data::{encode_rounds, Dataset};
pub use losses::{
    ce_regularization, ce_regularization_value, classification_loss, classification_loss_value, group_consistency_loss,
    group_consistency_value, smoothed_targets,
};
pub use trainer::{train, EpochMetrics, TrainInputs, TrainOutcome};
