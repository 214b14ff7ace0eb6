//! Optimizers, plateau callbacks, the epoch loop with best-epoch retention,
//! checkpoint persistence and the experiment leaderboard.

mod callbacks;
mod checkpoint;
mod fit;
mod leaderboard;
mod optim;

use thiserror::Error;

pub use callbacks::{early_stop, reduce_lr_on_plateau, EpochRecord, MetricGoal, MetricKind, TrainingHistory};
pub use checkpoint::{load_checkpoint, read_header, save_checkpoint, CheckpointHeader, ParamEntry, MAGIC};
pub use fit::{
    fit, load_samples, make_batch, metric_for, predict_classes, predict_pm25, predict_probabilities,
    train_model, validation_metric, FitOutcome, Sample, TrainOptions, TrainRun,
};
pub use leaderboard::{base_label, read_leaderboard, table_rows, write_leaderboard, LeaderboardEntry, LeaderboardRow};
pub use optim::{nadam_step, rmsprop_step, OptimizerKind, OptimizerSpec, OptimizerState};

use crate::dataset::Split;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("optimizer state belongs to {0}")]
    WrongOptimizer(&'static str),
    #[error("learning rate must be positive, got {0}")]
    InvalidLearningRate(f64),
    #[error("invalid training options: {0}")]
    InvalidOptions(String),
    #[error("{0} split is empty")]
    EmptySplit(Split),
    #[error("image missing: {0}")]
    ImageMissing(String),
    #[error("sample {0} has no decile class")]
    MissingClass(usize),
    #[error("non-finite loss or metric at epoch {0}")]
    NonFinite(usize),
    #[error("not an IPM1 checkpoint")]
    BadMagic,
    #[error("checkpoint truncated: need {expected} bytes, found {found}")]
    TruncatedPayload { expected: usize, found: usize },
    #[error("checkpoint header disagrees with payload: {0}")]
    ShapeHeaderMismatch(String),
    #[error("leaderboard row `{0}` does not parse")]
    BadRow(String),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Model(#[from] crate::models::ModelError),
    #[error(transparent)]
    Nn(#[from] crate::nn::NnError),
    #[error(transparent)]
    Tile(#[from] crate::tiles::TileError),
    #[error(transparent)]
    Metric(#[from] crate::eval::EvalError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}
