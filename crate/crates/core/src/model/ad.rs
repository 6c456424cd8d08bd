use rand::Rng;
use serde_json::json;

use super::{
    check_sample, encode_dialogue, init_encoder_stack, BlockWeights, Downstream, Head, ModelConfig, ModelError,
    TaskOutput,
};
use crate::corpus::DialogueSample;
use crate::nn::{EncoderBlockParams, Graph, Linear, Matrix, ParamId, ParamStore, Real, Var};

/// Single-task AD classifier: input projection, positional encoding,
/// encoder stack, mean pooling and a two-layer head with two logits.
///
/// With block weighting enabled the input is `K` horizontally stacked blocks
/// of width `input_dim`, mixed by softmax-normalized learned logits before
/// the projection.
#[derive(Clone, Debug)]
pub struct AdModel<T: Real> {
    pub config: ModelConfig,
    /// Width fed to the input projection.
    pub input_dim: usize,
    pub store: ParamStore<T>,
    pub input_proj: Linear,
    pub encoder: Vec<EncoderBlockParams>,
    pub head: Head,
    /// Mixing logits (`1×K`) and `K`, when block weighting is on.
    pub block_logits: Option<(ParamId, usize)>,
}

impl<T: Real> AdModel<T> {
    pub fn init<R: Rng + ?Sized>(input_dim: usize, config: ModelConfig, rng: &mut R) -> Result<Self, ModelError> {
        Self::build(input_dim, None, config, rng)
    }

    /// Block-weighted variant over `num_blocks` stacked blocks of `block_dim`.
    /// The logits start at zero, so the initial mix is uniform.
    pub fn init_weighted<R: Rng + ?Sized>(
        block_dim: usize,
        num_blocks: usize,
        config: ModelConfig,
        rng: &mut R,
    ) -> Result<Self, ModelError> {
        if num_blocks == 0 {
            return Err(ModelError::BlockCount { expected: 1, got: 0 });
        }
        Self::build(block_dim, Some(num_blocks), config, rng)
    }

    fn build<R: Rng + ?Sized>(
        input_dim: usize,
        num_blocks: Option<usize>,
        config: ModelConfig,
        rng: &mut R,
    ) -> Result<Self, ModelError> {
        config.encoder_dims().validate()?;
        let mut store = ParamStore::new();
        let block_logits = num_blocks.map(|k| (store.add("ad.block_logits", Matrix::zeros(1, k)), k));
        let input_proj = Linear::init(&mut store, "ad.reduce", input_dim, config.d_model, rng);
        let encoder = init_encoder_stack(&mut store, "ad.encoder", &config, rng)?;
        let head = Head::init(&mut store, "ad.head", &config, 2, rng);
        Ok(Self { config, input_dim, store, input_proj, encoder, head, block_logits })
    }

    /// Width a sample must have.
    pub fn sample_width(&self) -> usize {
        self.input_dim * self.block_logits.map_or(1, |(_, k)| k)
    }

    /// Current mixing weights, when block weighting is on.
    pub fn block_weights(&self) -> Option<BlockWeights> {
        self.block_logits.map(|(id, _)| BlockWeights {
            logits: self.store.get(id).as_slice().iter().map(|v| v.as_f64()).collect(),
        })
    }

    /// Logits (`1×2`) for an `N×sample_width` feature matrix whose rows with
    /// `mask[i] == false` are padding.
    pub fn forward_features(&self, g: &mut Graph<'_, T>, x: Var, mask: &[bool]) -> Result<Var, ModelError> {
        let x = match self.block_logits {
            Some((id, k)) => {
                let logits = g.param(id);
                let w = g.softmax_rows(logits, None)?;
                g.block_combine(w, x, k)?
            }
            None => x,
        };
        let pooled = encode_dialogue(g, x, &self.input_proj, &self.encoder, mask, &self.config)?;
        Ok(self.head.forward(g, pooled)?)
    }

    /// Evaluation-mode logits for one sample, as `f64`.
    pub fn forward_ad(&self, sample: &DialogueSample) -> Result<[f64; 2], ModelError> {
        let mut g = Graph::new(&self.store);
        let out = match self.forward_sample(&mut g, sample)? {
            TaskOutput::AdLogits(v) | TaskOutput::Severity(v) => v,
        };
        let m = g.value(out);
        Ok([m.as_slice()[0].as_f64(), m.as_slice()[1].as_f64()])
    }

    /// Closed-form scalar count for the unweighted model.
    pub fn param_count(input_dim: usize, config: &ModelConfig) -> usize {
        let d = config.d_model;
        (input_dim * d + d)
            + config.encoder_layers * config.encoder_dims().num_scalars()
            + (d * config.fc_hidden + config.fc_hidden)
            + (config.fc_hidden * 2 + 2)
    }
}

impl<T: Real> Downstream<T> for AdModel<T> {
    fn store(&self) -> &ParamStore<T> {
        &self.store
    }

    fn store_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.store
    }

    fn forward_sample(&self, g: &mut Graph<'_, T>, sample: &DialogueSample) -> Result<TaskOutput, ModelError> {
        check_sample(sample, self.sample_width())?;
        let x = g.constant(sample.utterance_features.cast());
        let mask = vec![true; sample.num_utterances()];
        Ok(TaskOutput::AdLogits(self.forward_features(g, x, &mask)?))
    }

    fn block_weights(&self) -> Option<Vec<f64>> {
        AdModel::block_weights(self).map(|w| w.weights())
    }

    fn checkpoint_meta(&self) -> serde_json::Value {
        json!({
            "architecture": if self.block_logits.is_some() { "ad_weighted" } else { "ad" },
            "config": self.config,
            "input_dim": self.input_dim,
            "num_blocks": self.block_logits.map(|(_, k)| k),
        })
    }
}
