//! Optimizer, two-phase training loop and checkpoint container.

mod adam;
mod checkpoint;
mod config;
mod train;

pub use adam::{adam_step, AdamHyper, AdamState, ADAM_BETA1, ADAM_BETA2, ADAM_EPSILON};
pub use checkpoint::{
    load_checkpoint, save_checkpoint, Checkpoint, CheckpointMeta, Phase, DTYPE_F32, MAGIC, VERSION,
};
pub use config::{FeatureNetConfig, PhaseConfig, TrainConfig, TrainSchedule};
pub use train::{
    discriminator_step, extractor_for, generator_step, pretrain_srresnet, pretrain_step,
    set_eval_mode, set_train_mode, train_srgan, CheckpointOptions, DStep, Dataset,
    DiscriminatorState, GeneratorState, LogRecord, TrainLog,
};
