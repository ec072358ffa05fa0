//! Progressive schedule and the resumable GAN training loop. Encoder
//! training lives next to the encoder in [`crate::vqcpc`].

mod gan;
mod schedule;

pub use gan::{
    train_gan, GanDataset, GanExample, GanLogRow, GanModels, GanRunOptions, GanTrainer, GeneratorCheckpoint, TrainCursor,
    LATEST_CHECKPOINT,
};
pub use schedule::{progressive_schedule, ScalePhase};
