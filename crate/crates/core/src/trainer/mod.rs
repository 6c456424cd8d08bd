//! Optimization loop: Adam, the linear schedule, balanced cross-corpus
//! batching, best-validation selection and multi-seed orchestration.

mod adam;
mod batches;
mod config;
mod run;

pub use adam::{adam_step, clip_global_norm, AdamState};
pub use batches::{make_balanced_batches, Batch};
pub use config::{lr_at, TrainConfig};
pub use run::{
    combined_loss, evaluate, multi_seed, predict, train_run, worker_pool, write_run_log, EpochRecord, EvalMetrics,
    MultiSeedOutcome, RunOutcome, RunReport, RunResult, Selection, TaskOutputValue, TrainData,
};

use crate::evalreport::EvalError;
use crate::model::ModelError;

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("epoch {epoch} outside the schedule of {epochs} epochs")]
    EpochOutOfRange { epoch: usize, epochs: usize },
    #[error("non-finite gradient for parameter {param}")]
    NonFiniteGradient { param: String },
    #[error("training diverged at epoch {epoch}, step {step}: loss {loss}")]
    Divergence { epoch: usize, step: usize, loss: f64 },
    #[error("training diverged at epoch {epoch}, step {step}: non-finite gradient for {param}")]
    GradientDivergence { epoch: usize, step: usize, param: String },
    #[error("no training samples")]
    EmptyCorpus,
    #[error("no samples in the {0} split")]
    MissingSplit(&'static str),
    #[error("sample {0} lacks the label its task needs")]
    MissingLabel(String),
    #[error("seed {seed}: {source}")]
    Seed { seed: u64, source: Box<TrainError> },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl TrainError {
    /// Whether this error (or the per-seed error it wraps) is a divergence.
    pub fn is_divergence(&self) -> bool {
        match self {
            TrainError::Divergence { .. } | TrainError::GradientDivergence { .. } => true,
            TrainError::Seed { source, .. } => source.is_divergence(),
            _ => false,
        }
    }
}
