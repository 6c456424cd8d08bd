use std::io::Write;
use std::path::Path;

use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{adam_step, clip_global_norm, lr_at, make_balanced_batches, AdamState, TrainConfig, TrainError};
use crate::corpus::{Corpus, DialogueSample};
use crate::evalreport::{aggregate_seeds, f1_outcome, rmse, SeedAggregate};
use crate::model::{Downstream, ModelError, TaskOutput};
use crate::nn::{Gradients, Graph};
use crate::rng;

/// Corpora for one run. Single-task AD runs leave `dep` empty and vice versa.
#[derive(Clone, Copy, Debug, Default)]
pub struct TrainData<'a> {
    pub ad: Option<&'a Corpus>,
    pub dep: Option<&'a Corpus>,
}

impl<'a> TrainData<'a> {
    pub fn single(ad: &'a Corpus) -> Self {
        Self { ad: Some(ad), dep: None }
    }

    pub fn joint(ad: &'a Corpus, dep: &'a Corpus) -> Self {
        Self { ad: Some(ad), dep: Some(dep) }
    }

    pub fn dep_only(dep: &'a Corpus) -> Self {
        Self { ad: None, dep: Some(dep) }
    }
}

/// Validation metric used to pick the reported checkpoint.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Selection {
    /// Highest AD F1, earliest epoch on ties.
    AdF1,
    /// Lowest depression RMSE, earliest epoch on ties.
    DepRmse,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub lr: f64,
    /// Mean combined batch loss.
    pub train_loss: f64,
    pub train_loss_ad: Option<f64>,
    pub train_loss_dep: Option<f64>,
    pub train_f1: Option<f64>,
    pub val_f1: Option<f64>,
    pub val_rmse: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub seed: u64,
    /// 1-based epoch of the selected checkpoint.
    pub best_epoch: usize,
    pub selection: Selection,
    pub best_validation: f64,
    pub test_f1: Option<f64>,
    /// The test F1 came from the zero-denominator convention.
    pub test_f1_zero_denominator: bool,
    pub test_rmse: Option<f64>,
    /// Softmax block weights of the selected checkpoint, when learned.
    pub block_weights: Option<Vec<f64>>,
    pub trace: Vec<EpochRecord>,
}

/// A finished run with the parameters of the selected epoch.
#[derive(Clone, Debug)]
pub struct RunOutcome<M> {
    pub result: RunResult,
    pub model: M,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalMetrics {
    pub f1: Option<f64>,
    pub f1_zero_denominator: bool,
    pub rmse: Option<f64>,
}

/// Evaluation-mode output of one sample: AD logits or a severity.
pub fn predict<M: Downstream<f32>>(model: &M, sample: &DialogueSample) -> Result<TaskOutputValue, ModelError> {
    let mut g = Graph::new(model.store());
    Ok(match model.forward_sample(&mut g, sample)? {
        TaskOutput::AdLogits(v) => {
            let s = g.value(v).as_slice();
            TaskOutputValue::AdLogits([s[0] as f64, s[1] as f64])
        }
        TaskOutput::Severity(v) => TaskOutputValue::Severity(g.value(v).item() as f64),
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum TaskOutputValue {
    AdLogits([f64; 2]),
    Severity(f64),
}

/// F1 over AD samples and RMSE over depression samples, whichever exist.
pub fn evaluate<M: Downstream<f32>>(model: &M, samples: &[DialogueSample]) -> Result<EvalMetrics, TrainError> {
    let (mut preds, mut labels, mut sev, mut targets) = (vec![], vec![], vec![], vec![]);
    for s in samples {
        match predict(model, s)? {
            TaskOutputValue::AdLogits(l) => {
                preds.push(l[1] > l[0]);
                labels.push(s.label.ad_positive.ok_or_else(|| TrainError::MissingLabel(s.dialogue_id.clone()))?);
            }
            TaskOutputValue::Severity(p) => {
                sev.push(p);
                targets.push(
                    s.label.depression_severity.ok_or_else(|| TrainError::MissingLabel(s.dialogue_id.clone()))?,
                );
            }
        }
    }
    let mut out = EvalMetrics::default();
    if !preds.is_empty() {
        let f = f1_outcome(&preds, &labels)?;
        out.f1 = Some(f.value);
        out.f1_zero_denominator = f.zero_denominator;
    }
    if !sev.is_empty() {
        out.rmse = Some(rmse(&sev, &targets)?);
    }
    Ok(out)
}

/// `L = L_AD + λ·L_dep`.
pub fn combined_loss(ad: f64, dep: f64, lambda: f64) -> f64 {
    ad + lambda * dep
}

fn nonempty<'a>(c: Option<&'a Corpus>, f: impl Fn(&'a Corpus) -> &'a [DialogueSample]) -> &'a [DialogueSample] {
    c.map(f).unwrap_or(&[])
}

/// Trains one seed: parameters from `init` on the seed's init stream, the
/// linear schedule, balanced batches, best-validation selection and a final
/// test evaluation of the selected parameters. Deterministic in
/// `(cfg, data, seed)`.
pub fn train_run<M, F>(cfg: &TrainConfig, data: TrainData<'_>, seed: u64, init: F) -> Result<RunOutcome<M>, TrainError>
where
    M: Downstream<f32>,
    F: Fn(&mut ChaCha8Rng) -> Result<M, ModelError>,
{
    cfg.validate()?;
    let ad_train = nonempty(data.ad, |c| &c.train);
    let dep_train = nonempty(data.dep, |c| &c.train);
    if ad_train.is_empty() && dep_train.is_empty() {
        return Err(TrainError::EmptyCorpus);
    }
    let validation: Vec<DialogueSample> = nonempty(data.ad, |c| &c.validation)
        .iter()
        .chain(nonempty(data.dep, |c| &c.validation))
        .cloned()
        .collect();
    let selection = if nonempty(data.ad, |c| &c.validation).is_empty() {
        if nonempty(data.dep, |c| &c.validation).is_empty() {
            return Err(TrainError::MissingSplit("validation"));
        }
        Selection::DepRmse
    } else {
        Selection::AdF1
    };
    let ad_labels = ad_train
        .iter()
        .map(|s| s.ad_class().ok_or_else(|| TrainError::MissingLabel(s.dialogue_id.clone())))
        .collect::<Result<Vec<_>, _>>()?;
    let dep_targets = dep_train
        .iter()
        .map(|s| s.label.depression_severity.ok_or_else(|| TrainError::MissingLabel(s.dialogue_id.clone())))
        .collect::<Result<Vec<_>, _>>()?;
    let dep_weight = if ad_train.is_empty() { 1.0 } else { cfg.lambda_dep };

    let mut model = init(&mut rng::stream(seed, "init"))?;
    let mut dropout_rng = Some(rng::stream(seed, "dropout"));
    let mut batch_rng = rng::stream(seed, "batches");
    let mut state = AdamState::new(model.store());
    for (i, (name, _)) in model.store().iter().enumerate() {
        if name.ends_with("block_logits") {
            state.lr_scale[i] = cfg.block_weight_lr_scale;
        }
    }

    let mut best: Option<(usize, f64, M)> = None;
    let mut trace = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let lr = lr_at(epoch, cfg)?;
        let batches = make_balanced_batches(ad_train.len(), dep_train.len(), cfg.batch_size, &mut batch_rng)?;
        let (mut loss_sum, mut ad_sum, mut ad_n, mut dep_sum, mut dep_n) = (0.0, 0.0, 0usize, 0.0, 0usize);
        for (step, batch) in batches.iter().enumerate() {
            let mut grads = Gradients::zeros_like(model.store());
            let (mut batch_ad, mut batch_dep) = (0.0, 0.0);
            for &i in &batch.ad {
                let coeff = 1.0 / batch.ad.len() as f64;
                let mut g = Graph::training(model.store(), dropout_rng.take().expect("rng returned"));
                let TaskOutput::AdLogits(out) = model.forward_sample(&mut g, &ad_train[i])? else {
                    return Err(TrainError::Config("AD sample produced a non-AD output".into()));
                };
                let loss = g.cross_entropy(out, ad_labels[i]).map_err(ModelError::from)?;
                let value = g.value(loss).item() as f64;
                let scaled = g.scale(loss, coeff as f32);
                grads.add_assign(&g.backward(scaled).map_err(ModelError::from)?);
                dropout_rng = g.into_rng();
                batch_ad += value * coeff;
                ad_sum += value;
                ad_n += 1;
            }
            for &i in &batch.dep {
                let coeff = dep_weight / batch.dep.len() as f64;
                let mut g = Graph::training(model.store(), dropout_rng.take().expect("rng returned"));
                let TaskOutput::Severity(out) = model.forward_sample(&mut g, &dep_train[i])? else {
                    return Err(TrainError::Config("depression sample produced a non-severity output".into()));
                };
                let loss = g.squared_error(out, dep_targets[i] as f32).map_err(ModelError::from)?;
                let value = g.value(loss).item() as f64;
                let scaled = g.scale(loss, coeff as f32);
                grads.add_assign(&g.backward(scaled).map_err(ModelError::from)?);
                dropout_rng = g.into_rng();
                batch_dep += value / batch.dep.len() as f64;
                dep_sum += value;
                dep_n += 1;
            }
            let batch_loss = combined_loss(batch_ad, batch_dep, dep_weight);
            if !batch_loss.is_finite() {
                return Err(TrainError::Divergence { epoch: epoch + 1, step: step + 1, loss: batch_loss });
            }
            loss_sum += batch_loss;
            if let Some(c) = cfg.grad_clip {
                clip_global_norm(&mut grads, c);
            }
            adam_step(model.store_mut(), &grads, &mut state, lr, cfg).map_err(|e| match e {
                TrainError::NonFiniteGradient { param } => {
                    TrainError::GradientDivergence { epoch: epoch + 1, step: step + 1, param }
                }
                other => other,
            })?;
        }

        let val = evaluate(&model, &validation)?;
        let train_f1 = if cfg.track_train_f1 && !ad_train.is_empty() { evaluate(&model, ad_train)?.f1 } else { None };
        trace.push(EpochRecord {
            epoch: epoch + 1,
            lr,
            train_loss: loss_sum / batches.len() as f64,
            train_loss_ad: (ad_n > 0).then(|| ad_sum / ad_n as f64),
            train_loss_dep: (dep_n > 0).then(|| dep_sum / dep_n as f64),
            train_f1,
            val_f1: val.f1,
            val_rmse: val.rmse,
        });
        let score = match selection {
            Selection::AdF1 => val.f1.expect("AD validation present"),
            Selection::DepRmse => val.rmse.expect("depression validation present"),
        };
        let better = match &best {
            None => true,
            Some((_, b, _)) => match selection {
                Selection::AdF1 => score > *b,
                Selection::DepRmse => score < *b,
            },
        };
        if better {
            best = Some((epoch + 1, score, model.clone()));
        }
    }

    let (best_epoch, best_validation, model) = best.expect("at least one epoch");
    let test: Vec<DialogueSample> = nonempty(data.ad, |c| &c.test)
        .iter()
        .chain(nonempty(data.dep, |c| &c.test))
        .cloned()
        .collect();
    if test.is_empty() {
        return Err(TrainError::MissingSplit("test"));
    }
    let t = evaluate(&model, &test)?;
    let block_weights = model.block_weights();
    Ok(RunOutcome {
        result: RunResult {
            seed,
            best_epoch,
            selection,
            best_validation,
            test_f1: t.f1,
            test_f1_zero_denominator: t.f1_zero_denominator,
            test_rmse: t.rmse,
            block_weights,
            trace,
        },
        model,
    })
}

/// Per-seed results and their aggregate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub runs: Vec<RunResult>,
    pub aggregate: SeedAggregate,
}

#[derive(Clone, Debug)]
pub struct MultiSeedOutcome<M> {
    pub report: RunReport,
    pub models: Vec<M>,
}

/// Worker pool sized by `XFERLAB_THREADS` when set, else rayon's default.
pub fn worker_pool() -> Result<rayon::ThreadPool, TrainError> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Some(n) = std::env::var("XFERLAB_THREADS").ok().and_then(|v| v.trim().parse::<usize>().ok()) {
        b = b.num_threads(n.max(1));
    }
    b.build().map_err(|e| TrainError::Config(format!("cannot start worker pool: {e}")))
}

/// Runs every seed in `cfg.seeds` as an independent job and aggregates.
pub fn multi_seed<M, F>(cfg: &TrainConfig, data: TrainData<'_>, init: F) -> Result<MultiSeedOutcome<M>, TrainError>
where
    M: Downstream<f32>,
    F: Fn(&mut ChaCha8Rng) -> Result<M, ModelError> + Sync,
{
    cfg.validate()?;
    let pool = worker_pool()?;
    let outcomes: Vec<Result<RunOutcome<M>, TrainError>> = pool.install(|| {
        cfg.seeds.par_iter().map(|&seed| train_run(cfg, data, seed, &init)).collect()
    });
    let mut runs = Vec::with_capacity(outcomes.len());
    let mut models = Vec::with_capacity(outcomes.len());
    for (seed, o) in cfg.seeds.iter().zip(outcomes) {
        let o = o.map_err(|e| TrainError::Seed { seed: *seed, source: Box::new(e) })?;
        runs.push(o.result);
        models.push(o.model);
    }
    let aggregate = aggregate_seeds(&runs)?;
    Ok(MultiSeedOutcome { report: RunReport { runs, aggregate }, models })
}

/// One JSON object per epoch, tagged with the seed.
pub fn write_run_log(result: &RunResult, path: impl AsRef<Path>) -> std::io::Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    for r in &result.trace {
        let mut v = serde_json::to_value(r)?;
        v["seed"] = result.seed.into();
        serde_json::to_writer(&mut f, &v)?;
        f.write_all(b"\n")?;
    }
    f.flush()
}
