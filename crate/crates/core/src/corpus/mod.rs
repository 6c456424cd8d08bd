//! In-memory corpora: utterance pooling at ingestion, feature-group
//! assembly, and sub-dialogue augmentation.

mod augment;
mod load;

pub use augment::{
    augment_corpus, balanced_subdialogue_count, min_window, sample_subdialogue, write_augmentation_log,
    AugmentationConfig, AugmentationRecord, AugmentedSplit,
};
pub use load::{FeatureGroup, InputSpec, PooledCorpus, PooledDialogue};

use serde::{Deserialize, Serialize};

use crate::feature_store::{FormatError, Label, ManifestError, Split, Task, ValidationReport};
use crate::nn::Matrix;

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("cannot pool an empty utterance")]
    EmptyUtterance,
    #[error("non-finite frame values")]
    NonFinite,
    #[error("augmentation applies to the train split only, got {0:?}")]
    NotTrainSplit(Split),
    #[error("invalid augmentation config: {0}")]
    Config(String),
    #[error("manifest failed validation with {} violation(s)", .0.violations.len())]
    Invalid(ValidationReport),
    #[error("dialogue {dialogue_id}: {message}")]
    Dialogue { dialogue_id: String, message: String },
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error(transparent)]
    Manifest(#[from] ManifestError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

/// Utterance-level temporal pooling operator.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pooling {
    #[default]
    Mean,
    Max,
}

/// Collapses a `(T, D)` frame matrix to a `D` vector by averaging over time.
pub fn pool_utterance(frames: &Matrix<f32>) -> Result<Vec<f32>, CorpusError> {
    pool_with(frames, Pooling::Mean)
}

pub fn pool_with(frames: &Matrix<f32>, op: Pooling) -> Result<Vec<f32>, CorpusError> {
    if frames.rows() == 0 || frames.cols() == 0 {
        return Err(CorpusError::EmptyUtterance);
    }
    if !frames.is_finite() {
        return Err(CorpusError::NonFinite);
    }
    let d = frames.cols();
    Ok(match op {
        Pooling::Mean => {
            let mut acc = vec![0f64; d];
            for t in 0..frames.rows() {
                for (a, &v) in acc.iter_mut().zip(frames.row(t)) {
                    *a += v as f64;
                }
            }
            let n = frames.rows() as f64;
            acc.into_iter().map(|a| (a / n) as f32).collect()
        }
        Pooling::Max => {
            let mut acc = frames.row(0).to_vec();
            for t in 1..frames.rows() {
                for (a, &v) in acc.iter_mut().zip(frames.row(t)) {
                    *a = a.max(v);
                }
            }
            acc
        }
    })
}

/// One dialogue as a sequence of pooled utterance rows.
#[derive(Clone, Debug, PartialEq)]
pub struct DialogueSample {
    pub dialogue_id: String,
    /// `(N, D_in)`; row `n` is utterance `n`.
    pub utterance_features: Matrix<f32>,
    pub label: Label,
    pub source_task: Task,
}

impl DialogueSample {
    pub fn num_utterances(&self) -> usize {
        self.utterance_features.rows()
    }

    pub fn input_dim(&self) -> usize {
        self.utterance_features.cols()
    }

    /// Contiguous window of utterances `a..=b`, 1-based inclusive.
    pub fn window(&self, a: usize, b: usize) -> DialogueSample {
        DialogueSample {
            dialogue_id: self.dialogue_id.clone(),
            utterance_features: self.utterance_features.slice_rows(a - 1, b),
            label: self.label,
            source_task: self.source_task,
        }
    }

    /// Binary AD class index (1 = AD) when the label carries one.
    pub fn ad_class(&self) -> Option<usize> {
        self.label.ad_positive.map(usize::from)
    }
}

/// Train/validation/test partitions of one corpus.
#[derive(Clone, Debug, PartialEq)]
pub struct Corpus {
    pub corpus_id: String,
    pub task: Task,
    pub train: Vec<DialogueSample>,
    pub validation: Vec<DialogueSample>,
    pub test: Vec<DialogueSample>,
}

impl Corpus {
    pub fn split(&self, split: Split) -> &[DialogueSample] {
        match split {
            Split::Train => &self.train,
            Split::Validation => &self.validation,
            Split::Test => &self.test,
        }
    }

    pub fn input_dim(&self) -> Option<usize> {
        self.train.iter().chain(&self.validation).chain(&self.test).map(DialogueSample::input_dim).next()
    }

    pub fn len(&self) -> usize {
        self.train.len() + self.validation.len() + self.test.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}
