//! The trainable listener model and its training procedure.

pub mod adam;
pub mod checkpoint;
pub mod model;
pub mod norm;
pub mod train;

pub use adam::{adam_step, AdamState};
pub use checkpoint::{Checkpoint, TrainingMeta};
pub use model::{init_params, Activation, BackboneConfig, ConvBlock, Model, ModelParams};
pub use norm::{normalize_fit, NormStats};
pub use train::{
    ensemble, item_id, kfold_split, mean_nll, predict, train, train_fold, Augmentation, Fold,
    FoldOutcome, LossRecord, ProvenanceRecord, Sample, Split, TrainConfig, TrainOutcome,
};
