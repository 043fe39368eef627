//! Patch GAN: losses, augmentation, networks and training.

pub mod jitter;
pub mod losses;
pub mod nets;
pub mod train;

pub use jitter::{apply_jitter, color_jitter, JitterParams, JitterRanges};
pub use losses::{
    discriminator_loss, generator_loss, histogram, histogram_kl, log_variance_focus, DeblurLoss, SoftHistogram,
    EPS_FOCUS, EPS_HIST, SIGMA_LOG,
};
pub use nets::{mirror_pad, Discriminator, DiscriminatorArch, Generator, GeneratorArch, MIN_INPUT};
pub use train::{train, Direction, DomainPool, GanConfig, GanModel, LossRecord, TaskLoss, TrainState};
