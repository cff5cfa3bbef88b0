//! Training loops for the teacher, scratch students and distilled students.

mod checkpoint;
mod config;
mod trainer;

pub use checkpoint::{Checkpoint, CheckpointInfo, ProjectorMeta};
pub use config::{OptimizerKind, Precision, Preset, Schedule, TrainConfig, MODES};
pub use trainer::{
    derive_seed, distill, epoch_order, lr_at, train_scratch, train_teacher, weighted_total, EpochRecord, RunOutput,
    Session, StepLosses, BEST_CKPT, CKPT_DIR, LAST_CKPT, LOG_FILE, LOG_HEADER,
};
