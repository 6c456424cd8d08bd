//! Block-wise probing: one downstream model per encoder block plus one
//! jointly trained softmax mixture over all blocks.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::report::{BlockwiseRow, BlockwiseTable, RowLabel};
use super::{aggregate_seeds, EvalError, F1Stats, SeedAggregate};
use crate::corpus::{Corpus, DialogueSample};
use crate::model::{AdModel, ModelConfig};
use crate::nn::Matrix;
use crate::trainer::{train_run, worker_pool, RunResult, TrainConfig, TrainData, TrainError};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeConfig {
    pub model_tag: String,
    pub train: TrainConfig,
    pub model: ModelConfig,
    /// Blocks that get their own row; `None` probes every supplied block.
    pub probe_blocks: Option<Vec<u16>>,
    /// Also train the weighted combination over every supplied block.
    pub weighted: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlockProbeResult {
    pub model_tag: String,
    pub block_index: u16,
    pub f1_avg: f64,
    pub f1_max: f64,
    pub f1_std: f64,
    pub zero_denominator: bool,
    pub runs: Vec<RunResult>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightedProbeResult {
    pub f1_avg: f64,
    pub f1_max: f64,
    pub f1_std: f64,
    pub zero_denominator: bool,
    /// Block order of the weight vectors.
    pub blocks: Vec<u16>,
    /// Mean over seeds of the selected checkpoints' softmax weights.
    pub mean_weights: Vec<f64>,
    pub runs: Vec<RunResult>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeReport {
    pub model_tag: String,
    pub blocks: Vec<BlockProbeResult>,
    pub weighted: Option<WeightedProbeResult>,
    /// Block with the highest F1-avg (lowest index on ties).
    pub argmax_block: u16,
    /// Per seed, the block with the highest test F1 (lowest index on ties).
    pub per_seed_argmax: Vec<u16>,
}

impl ProbeReport {
    pub fn table(&self) -> BlockwiseTable {
        let mut rows: Vec<BlockwiseRow> = self
            .blocks
            .iter()
            .map(|b| BlockwiseRow {
                label: RowLabel::Block(b.block_index),
                cells: vec![Some(F1Stats { avg: b.f1_avg, max: b.f1_max, std: b.f1_std })],
                zero_denominator: b.zero_denominator,
            })
            .collect();
        if let Some(w) = &self.weighted {
            rows.push(BlockwiseRow {
                label: RowLabel::Weighted,
                cells: vec![Some(F1Stats { avg: w.f1_avg, max: w.f1_max, std: w.f1_std })],
                zero_denominator: w.zero_denominator,
            });
        }
        BlockwiseTable { models: vec![self.model_tag.clone()], rows }
    }
}

fn same_structure(a: &[DialogueSample], b: &[DialogueSample]) -> bool {
    a.len() == b.len()
        && a.iter().zip(b).all(|(x, y)| {
            x.dialogue_id == y.dialogue_id && x.label == y.label && x.num_utterances() == y.num_utterances()
        })
}

/// Horizontally stacks the per-block corpora sample by sample.
pub fn stack_blocks(corpora: &[&Corpus]) -> Result<Corpus, EvalError> {
    let first = corpora.first().ok_or(EvalError::Empty)?;
    let stack = |pick: fn(&Corpus) -> &Vec<DialogueSample>| -> Result<Vec<DialogueSample>, EvalError> {
        (0..pick(first).len())
            .map(|i| {
                let parts: Vec<&Matrix<f32>> = corpora.iter().map(|c| &pick(c)[i].utterance_features).collect();
                let features = Matrix::hcat(&parts).map_err(|e| EvalError::InconsistentBlocks(e.to_string()))?;
                Ok(DialogueSample { utterance_features: features, ..pick(first)[i].clone() })
            })
            .collect()
    };
    Ok(Corpus {
        corpus_id: first.corpus_id.clone(),
        task: first.task,
        train: stack(|c| &c.train)?,
        validation: stack(|c| &c.validation)?,
        test: stack(|c| &c.test)?,
    })
}

fn stats(runs: &[RunResult]) -> Result<(F1Stats, bool), TrainError> {
    let agg: SeedAggregate = aggregate_seeds(runs)?;
    let (Some(avg), Some(max), Some(std)) = (agg.f1_avg, agg.f1_max, agg.f1_std) else {
        return Err(EvalError::InconsistentMetrics("probe runs carry no F1".into()).into());
    };
    Ok((F1Stats { avg, max, std }, agg.f1_zero_denominator))
}

/// Trains `cfg.train.seeds` single-task AD runs on each probed block and,
/// when enabled, on the weighted combination of all blocks. All
/// `(block, seed)` jobs share one worker pool.
pub fn blockwise_probe(block_corpora: &[(u16, Corpus)], cfg: &ProbeConfig) -> Result<ProbeReport, TrainError> {
    if block_corpora.is_empty() {
        return Err(EvalError::Empty.into());
    }
    cfg.train.validate()?;
    let reference = &block_corpora[0].1;
    for (b, c) in &block_corpora[1..] {
        for (x, y) in [(&reference.train, &c.train), (&reference.validation, &c.validation), (&reference.test, &c.test)]
        {
            if !same_structure(x, y) {
                return Err(EvalError::InconsistentBlocks(format!(
                    "block {b} disagrees with block {} on dialogues, labels or lengths",
                    block_corpora[0].0
                ))
                .into());
            }
        }
    }
    let probed: Vec<usize> = match &cfg.probe_blocks {
        None => (0..block_corpora.len()).collect(),
        Some(list) => list
            .iter()
            .map(|b| {
                block_corpora.iter().position(|(i, _)| i == b).ok_or_else(|| {
                    TrainError::Config(format!("probe block {b} has no corpus"))
                })
            })
            .collect::<Result<_, _>>()?,
    };
    let model_cfg = ModelConfig { dropout_p: cfg.train.dropout_p, ..cfg.model.clone() };
    let stacked = if cfg.weighted {
        Some(stack_blocks(&block_corpora.iter().map(|(_, c)| c).collect::<Vec<_>>())?)
    } else {
        None
    };
    let block_dim = reference.input_dim().ok_or(EvalError::Empty)?;
    let k = block_corpora.len();

    // Job j < probed.len()·S is (probed block, seed); the rest are weighted seeds.
    let seeds = &cfg.train.seeds;
    let n_block_jobs = probed.len() * seeds.len();
    let n_jobs = n_block_jobs + if cfg.weighted { seeds.len() } else { 0 };
    let pool = worker_pool()?;
    let results: Vec<Result<RunResult, TrainError>> = pool.install(|| {
        (0..n_jobs)
            .into_par_iter()
            .map(|j| {
                let seed = seeds[j % seeds.len()];
                let out = if j < n_block_jobs {
                    let corpus = &block_corpora[probed[j / seeds.len()]].1;
                    train_run(&cfg.train, TrainData::single(corpus), seed, |r| {
                        AdModel::init(block_dim, model_cfg.clone(), r)
                    })
                } else {
                    let corpus = stacked.as_ref().expect("weighted corpus built");
                    train_run(&cfg.train, TrainData::single(corpus), seed, |r| {
                        AdModel::init_weighted(block_dim, k, model_cfg.clone(), r)
                    })
                };
                out.map(|o| o.result).map_err(|e| TrainError::Seed { seed, source: Box::new(e) })
            })
            .collect()
    });
    let results = results.into_iter().collect::<Result<Vec<_>, _>>()?;

    let mut blocks = Vec::with_capacity(probed.len());
    for (pi, &ci) in probed.iter().enumerate() {
        let runs = results[pi * seeds.len()..(pi + 1) * seeds.len()].to_vec();
        let (s, zero) = stats(&runs)?;
        blocks.push(BlockProbeResult {
            model_tag: cfg.model_tag.clone(),
            block_index: block_corpora[ci].0,
            f1_avg: s.avg,
            f1_max: s.max,
            f1_std: s.std,
            zero_denominator: zero,
            runs,
        });
    }
    let weighted = if cfg.weighted {
        let runs = results[n_block_jobs..].to_vec();
        let (s, zero) = stats(&runs)?;
        let mut mean_weights = vec![0.0; k];
        for r in &runs {
            let w = r.block_weights.as_ref().ok_or_else(|| TrainError::Config("weighted run lost its weights".into()))?;
            for (m, v) in mean_weights.iter_mut().zip(w) {
                *m += v / runs.len() as f64;
            }
        }
        Some(WeightedProbeResult {
            f1_avg: s.avg,
            f1_max: s.max,
            f1_std: s.std,
            zero_denominator: zero,
            blocks: block_corpora.iter().map(|(b, _)| *b).collect(),
            mean_weights,
            runs,
        })
    } else {
        None
    };

    let argmax = |score: &dyn Fn(&BlockProbeResult) -> f64| {
        let mut best = 0;
        for (i, b) in blocks.iter().enumerate() {
            if score(b) > score(&blocks[best]) {
                best = i;
            }
        }
        blocks[best].block_index
    };
    let argmax_block = argmax(&|b| b.f1_avg);
    let per_seed_argmax =
        (0..seeds.len()).map(|s| argmax(&|b| b.runs[s].test_f1.unwrap_or(f64::NEG_INFINITY))).collect();
    Ok(ProbeReport { model_tag: cfg.model_tag.clone(), blocks, weighted, argmax_block, per_seed_argmax })
}
