use rand::Rng;
use serde_json::json;

use super::{
    check_sample, encode_dialogue, init_encoder_stack, AdModel, Downstream, Head, ModelConfig, ModelError, TaskOutput,
};
use crate::corpus::DialogueSample;
use crate::feature_store::Task;
use crate::nn::{EncoderBlockParams, Graph, Linear, Matrix, ParamStore, Real, Var};

/// Two-task network. Each task has its own input reduction and head; the
/// encoder stack between them is shared.
#[derive(Clone, Debug)]
pub struct JointModel<T: Real> {
    pub config: ModelConfig,
    pub ad_input_dim: usize,
    pub dep_input_dim: usize,
    pub store: ParamStore<T>,
    pub ad_reduce: Linear,
    pub dep_reduce: Linear,
    pub shared: Vec<EncoderBlockParams>,
    pub ad_head: Head,
    pub dep_head: Head,
}

impl<T: Real> JointModel<T> {
    pub fn init<R: Rng + ?Sized>(
        ad_input_dim: usize,
        dep_input_dim: usize,
        config: ModelConfig,
        rng: &mut R,
    ) -> Result<Self, ModelError> {
        config.encoder_dims().validate()?;
        let mut store = ParamStore::new();
        let ad_reduce = Linear::init(&mut store, "ad.reduce", ad_input_dim, config.d_model, rng);
        let dep_reduce = Linear::init(&mut store, "dep.reduce", dep_input_dim, config.d_model, rng);
        let shared = init_encoder_stack(&mut store, "shared.encoder", &config, rng)?;
        let ad_head = Head::init(&mut store, "ad.head", &config, 2, rng);
        let dep_head = Head::init(&mut store, "dep.head", &config, 1, rng);
        Ok(Self { config, ad_input_dim, dep_input_dim, store, ad_reduce, dep_reduce, shared, ad_head, dep_head })
    }

    /// Sets the severity head's output bias, e.g. to the training-set mean.
    pub fn set_severity_offset(&mut self, value: f64) {
        let bias = self.dep_head.fc2.bias;
        *self.store.get_mut(bias) = Matrix::filled(1, 1, T::of(value));
    }

    pub fn input_dim(&self, task: Task) -> usize {
        match task {
            Task::Ad => self.ad_input_dim,
            Task::Depression => self.dep_input_dim,
        }
    }

    /// Task-specific output (`1×2` logits or `1×1` severity) for padded rows.
    pub fn forward_task(&self, g: &mut Graph<'_, T>, task: Task, x: Var, mask: &[bool]) -> Result<Var, ModelError> {
        let (reduce, head) = match task {
            Task::Ad => (&self.ad_reduce, &self.ad_head),
            Task::Depression => (&self.dep_reduce, &self.dep_head),
        };
        let pooled = encode_dialogue(g, x, reduce, &self.shared, mask, &self.config)?;
        Ok(head.forward(g, pooled)?)
    }

    /// Routes every sample to its own task branch; evaluation mode.
    pub fn forward_joint(&self, batch: &[DialogueSample]) -> Result<Vec<Vec<f64>>, ModelError> {
        batch
            .iter()
            .map(|s| {
                let mut g = Graph::new(&self.store);
                let out = match self.forward_sample(&mut g, s)? {
                    TaskOutput::AdLogits(v) | TaskOutput::Severity(v) => v,
                };
                Ok(g.value(out).as_slice().iter().map(|v| v.as_f64()).collect())
            })
            .collect()
    }

    /// Standalone AD classifier holding copies of the AD reduction, the
    /// shared stack and the AD head.
    pub fn ad_model(&self) -> AdModel<T> {
        let mut rng = crate::rng::stream(0, "placeholder");
        let mut ad = AdModel::init(self.ad_input_dim, self.config.clone(), &mut rng).expect("config already validated");
        for id in ad.store.ids().collect::<Vec<_>>() {
            let name = ad.store.name(id).replacen("ad.encoder.", "shared.encoder.", 1);
            let src = self.store.id_of(&name).expect("joint model has every AD-path parameter");
            *ad.store.get_mut(id) = self.store.get(src).clone();
        }
        ad
    }

    /// Closed-form scalar count.
    pub fn param_count(ad_input_dim: usize, dep_input_dim: usize, config: &ModelConfig) -> usize {
        let d = config.d_model;
        let head = d * config.fc_hidden + config.fc_hidden;
        (ad_input_dim * d + d)
            + (dep_input_dim * d + d)
            + config.encoder_layers * config.encoder_dims().num_scalars()
            + head
            + (config.fc_hidden * 2 + 2)
            + head
            + (config.fc_hidden + 1)
    }
}

impl<T: Real> Downstream<T> for JointModel<T> {
    fn store(&self) -> &ParamStore<T> {
        &self.store
    }

    fn store_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.store
    }

    fn forward_sample(&self, g: &mut Graph<'_, T>, sample: &DialogueSample) -> Result<TaskOutput, ModelError> {
        let task = sample.source_task;
        check_sample(sample, self.input_dim(task))?;
        let x = g.constant(sample.utterance_features.cast());
        let mask = vec![true; sample.num_utterances()];
        let out = self.forward_task(g, task, x, &mask)?;
        Ok(match task {
            Task::Ad => TaskOutput::AdLogits(out),
            Task::Depression => TaskOutput::Severity(out),
        })
    }

    fn checkpoint_meta(&self) -> serde_json::Value {
        json!({
            "architecture": "joint",
            "config": self.config,
            "ad_input_dim": self.ad_input_dim,
            "dep_input_dim": self.dep_input_dim,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::feature_store::Label;
    use crate::nn::Matrix;

    fn small() -> ModelConfig {
        ModelConfig { d_model: 8, heads: 2, d_ff: 16, encoder_layers: 2, fc_hidden: 4, dropout_p: 0.2, positional_encoding: true }
    }

    #[test]
    fn ad_branch_matches_extracted_ad_model_bitwise() {
        let mut rng = crate::rng::stream(3, "init");
        let joint = JointModel::<f32>::init(5, 7, small(), &mut rng).unwrap();
        let ad = joint.ad_model();
        let s = DialogueSample {
            dialogue_id: "x".into(),
            utterance_features: Matrix::from_fn(4, 5, |i, j| ((i * 5 + j) as f32 * 0.37).sin()),
            label: Label::ad(true),
            source_task: Task::Ad,
        };
        let a = ad.forward_ad(&s).unwrap();
        let j = joint.forward_joint(std::slice::from_ref(&s)).unwrap();
        assert_eq!(a.to_vec(), j[0]);
    }

    #[test]
    fn closed_form_counts_match_stores() {
        let cfg = ModelConfig::default();
        let mut rng = crate::rng::stream(0, "init");
        for d_in in [768, 1536] {
            let m = AdModel::<f32>::init(d_in, cfg.clone(), &mut rng).unwrap();
            assert_eq!(m.store.num_scalars(), AdModel::<f32>::param_count(d_in, &cfg));
        }
        assert_eq!(AdModel::<f32>::param_count(768, &cfg), 768 * 128 + 128 + 2 * 198_272 + 128 * 64 + 64 + 130);
        let j = JointModel::<f32>::init(1536, 768, cfg.clone(), &mut rng).unwrap();
        assert_eq!(j.store.num_scalars(), JointModel::<f32>::param_count(1536, 768, &cfg));
    }
}
