//! Adam with polynomial decay, checkpoints, and the training loop.

mod checkpoint;
mod optim;
mod trainer;

pub use checkpoint::{Checkpoint, MAGIC, VERSION};
pub use optim::{poly_lr, Adam, TrainConfig};
pub use trainer::{log_path, LogRow, TrainLog, Trainer, ValScores, BEST_CHECKPOINT, LAST_CHECKPOINT};
