//! Soft Dice training loop, checkpoints, inference and the ablation grid.

mod ablation;
mod checkpoint;
mod config;
mod fit;
mod infer;
mod loss;

pub use ablation::{run_ablation, AblationGrid};
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, Cursor, CHECKPOINT_MAGIC};
pub use config::{parse_config, read_config, TrainConfig};
pub use fit::{train, validation_dice, EpochRecord, FoldData, LabeledVolume, TrainOutcome};
pub use infer::{evaluate, predict, predict_with, Evaluation, PREDICT_BATCH};
pub use loss::soft_dice_loss;
