//! Downstream architectures: the single-task AD classifier (optionally with
//! learned block weighting) and the two-task network with per-task input
//! reductions, a shared encoder stack and per-task heads.

mod ad;
mod checkpoint;
mod joint;

pub use ad::AdModel;
pub use checkpoint::{decode_checkpoint, encode_checkpoint, read_checkpoint, write_checkpoint, CheckpointError, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use joint::JointModel;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::DialogueSample;
use crate::feature_store::Task;
use crate::nn::{
    encoder_block_forward, sinusoidal_positions, softmax, EncoderBlockParams, EncoderDims, Graph, Linear, Matrix,
    NnError, ParamStore, Real, Var,
};

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error("sample {dialogue_id} has input width {got}, model expects {expected}")]
    InputDim { dialogue_id: String, got: usize, expected: usize },
    #[error("sample {0} has no utterances")]
    EmptyDialogue(String),
    #[error("model has no branch for task {0:?}")]
    UnknownTask(Task),
    #[error("expected {expected} blocks, got {got}")]
    BlockCount { expected: usize, got: usize },
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
}

/// Hyperparameters shared by every downstream architecture.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub d_model: usize,
    pub heads: usize,
    pub d_ff: usize,
    /// Encoder blocks in the (shared) dialogue encoder.
    pub encoder_layers: usize,
    pub fc_hidden: usize,
    pub dropout_p: f64,
    pub positional_encoding: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self { d_model: 128, heads: 4, d_ff: 512, encoder_layers: 2, fc_hidden: 64, dropout_p: 0.2, positional_encoding: true }
    }
}

impl ModelConfig {
    pub fn encoder_dims(&self) -> EncoderDims {
        EncoderDims { d_model: self.d_model, heads: self.heads, d_ff: self.d_ff }
    }
}

/// Two fully connected layers with a ReLU between them.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Head {
    pub fc1: Linear,
    pub fc2: Linear,
}

impl Head {
    pub fn init<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        cfg: &ModelConfig,
        out_dim: usize,
        rng: &mut R,
    ) -> Self {
        let fc1 = Linear::init(store, &format!("{name}.fc1"), cfg.d_model, cfg.fc_hidden, rng);
        let fc2 = Linear::init(store, &format!("{name}.fc2"), cfg.fc_hidden, out_dim, rng);
        Self { fc1, fc2 }
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<'_, T>, pooled: Var) -> Result<Var, NnError> {
        let h = self.fc1.forward(g, pooled)?;
        let h = g.relu(h);
        self.fc2.forward(g, h)
    }

    pub fn num_scalars(&self) -> usize {
        self.fc1.num_scalars() + self.fc2.num_scalars()
    }
}

pub(crate) fn init_encoder_stack<T: Real, R: Rng + ?Sized>(
    store: &mut ParamStore<T>,
    name: &str,
    cfg: &ModelConfig,
    rng: &mut R,
) -> Result<Vec<EncoderBlockParams>, NnError> {
    (0..cfg.encoder_layers)
        .map(|i| EncoderBlockParams::init(store, &format!("{name}.{i}"), cfg.encoder_dims(), rng))
        .collect()
}

/// Reduction → positional encoding → encoder stack → mean over valid rows.
/// Returns the `1×d_model` dialogue embedding.
pub(crate) fn encode_dialogue<T: Real>(
    g: &mut Graph<'_, T>,
    x: Var,
    reduce: &Linear,
    blocks: &[EncoderBlockParams],
    mask: &[bool],
    cfg: &ModelConfig,
) -> Result<Var, NnError> {
    let (n, _) = g.shape(x);
    let mut h = reduce.forward(g, x)?;
    if cfg.positional_encoding {
        let pe = g.constant(sinusoidal_positions(n, cfg.d_model));
        h = g.add(h, pe)?;
    }
    for block in blocks {
        h = encoder_block_forward(g, h, block, mask, cfg.dropout_p)?;
    }
    g.mean_rows(h, mask)
}

/// Output node of one sample.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TaskOutput {
    /// `1×2` unnormalized AD logits (index 1 = AD).
    AdLogits(Var),
    /// `1×1` depression severity prediction.
    Severity(Var),
}

/// Common surface the training loop drives.
pub trait Downstream<T: Real>: Clone + Send + Sync {
    fn store(&self) -> &ParamStore<T>;
    fn store_mut(&mut self) -> &mut ParamStore<T>;
    fn forward_sample(&self, g: &mut Graph<'_, T>, sample: &DialogueSample) -> Result<TaskOutput, ModelError>;
    /// Architecture tag and configuration recorded in checkpoints.
    fn checkpoint_meta(&self) -> serde_json::Value;
    /// Softmax block-mixing weights, for models that learn them.
    fn block_weights(&self) -> Option<Vec<f64>> {
        None
    }
}

pub(crate) fn check_sample(sample: &DialogueSample, expected: usize) -> Result<(), ModelError> {
    if sample.num_utterances() == 0 {
        return Err(ModelError::EmptyDialogue(sample.dialogue_id.clone()));
    }
    if sample.input_dim() != expected {
        return Err(ModelError::InputDim {
            dialogue_id: sample.dialogue_id.clone(),
            got: sample.input_dim(),
            expected,
        });
    }
    Ok(())
}

/// `loss_ad + λ·loss_dep`.
pub fn combined_loss(loss_ad: f64, loss_dep: f64, lambda: f64) -> f64 {
    loss_ad + lambda * loss_dep
}

/// Learned mixing logits over encoder blocks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlockWeights {
    pub logits: Vec<f64>,
}

impl BlockWeights {
    pub const DEFAULT_BLOCKS: usize = 12;

    pub fn uniform(blocks: usize) -> Self {
        Self { logits: vec![0.0; blocks] }
    }

    /// Softmax of the logits: positive and summing to one.
    pub fn weights(&self) -> Vec<f64> {
        softmax(&self.logits)
    }
}

/// `Σ_k softmax(logits)_k · block_k` over same-shaped block matrices.
pub fn weighted_block_combine(blocks: &[Matrix<f32>], weights: &BlockWeights) -> Result<Matrix<f32>, ModelError> {
    if blocks.len() != weights.logits.len() || blocks.is_empty() {
        return Err(ModelError::BlockCount { expected: weights.logits.len(), got: blocks.len() });
    }
    let shape = blocks[0].shape();
    if blocks.iter().any(|b| b.shape() != shape) {
        return Err(NnError::Shape("blocks differ in shape".into()).into());
    }
    let stacked = Matrix::hcat(&blocks.iter().collect::<Vec<_>>())?.cast::<f64>();
    let mut store = ParamStore::<f64>::new();
    let id = store.add("block_logits", Matrix::row_vector(weights.logits.clone()));
    let mut g = Graph::new(&store);
    let logits = g.param(id);
    let w = g.softmax_rows(logits, None)?;
    let x = g.constant(stacked);
    let out = g.block_combine(w, x, blocks.len())?;
    Ok(g.value(out).cast())
}
