//! Sub-dialogue shuffling: random contiguous utterance windows that keep
//! order and label.

use std::io::Write;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{CorpusError, DialogueSample};
use crate::feature_store::Split;
use crate::rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentationConfig {
    pub subdialogues_per_dialogue: usize,
    /// Shortest window as a fraction of the dialogue length.
    pub min_fraction: f64,
    pub rng_seed: u64,
    /// Overrides `subdialogues_per_dialogue` when set.
    pub balance_target: Option<usize>,
}

impl Default for AugmentationConfig {
    fn default() -> Self {
        Self { subdialogues_per_dialogue: 50, min_fraction: 0.5, rng_seed: 0, balance_target: None }
    }
}

impl AugmentationConfig {
    pub fn validate(&self) -> Result<(), CorpusError> {
        if !(self.min_fraction > 0.0 && self.min_fraction <= 1.0) {
            return Err(CorpusError::Config(format!("min_fraction {} outside (0, 1]", self.min_fraction)));
        }
        if self.per_dialogue() == 0 {
            return Err(CorpusError::Config("sub-dialogue count must be positive".into()));
        }
        Ok(())
    }

    pub fn per_dialogue(&self) -> usize {
        self.balance_target.unwrap_or(self.subdialogues_per_dialogue)
    }
}

/// Shortest legal window for a dialogue of `n` utterances: `⌈min_fraction·n⌉`
/// clamped to `[1, n]`.
pub fn min_window(n: usize, min_fraction: f64) -> usize {
    // Guard against products like 0.1·30 landing a hair above an integer.
    let raw = (min_fraction * n as f64 - 1e-9).ceil();
    (raw.max(1.0) as usize).min(n)
}

/// Draws a window `(a, b)` with `1 ≤ a ≤ b ≤ n`, 1-based inclusive. The
/// length is uniform over `[min_window, n]`, then the start is uniform over
/// the positions where that length fits.
pub fn sample_subdialogue<R: Rng + ?Sized>(n: usize, cfg: &AugmentationConfig, rng: &mut R) -> (usize, usize) {
    assert!(n >= 1, "dialogue must have at least one utterance");
    let len = rng.random_range(min_window(n, cfg.min_fraction)..=n);
    let a = rng.random_range(1..=n - len + 1);
    (a, a + len - 1)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AugmentationRecord {
    pub dialogue_id: String,
    pub a: usize,
    pub b: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AugmentedSplit {
    pub samples: Vec<DialogueSample>,
    pub log: Vec<AugmentationRecord>,
}

/// Replaces every training dialogue with `cfg.per_dialogue()` random
/// sub-dialogues. Each dialogue draws from its own stream derived from
/// `(rng_seed, dialogue_id)`, so the result does not depend on corpus order.
pub fn augment_corpus(
    samples: &[DialogueSample],
    split: Split,
    cfg: &AugmentationConfig,
) -> Result<AugmentedSplit, CorpusError> {
    if split != Split::Train {
        return Err(CorpusError::NotTrainSplit(split));
    }
    cfg.validate()?;
    let count = cfg.per_dialogue();
    let mut out = AugmentedSplit { samples: Vec::with_capacity(samples.len() * count), log: Vec::new() };
    for s in samples {
        let mut r = rng::stream(cfg.rng_seed, &format!("augment/{}", s.dialogue_id));
        for _ in 0..count {
            let (a, b) = sample_subdialogue(s.num_utterances(), cfg, &mut r);
            out.samples.push(s.window(a, b));
            out.log.push(AugmentationRecord { dialogue_id: s.dialogue_id.clone(), a, b });
        }
    }
    Ok(out)
}

/// Per-dialogue sub-dialogue count that brings `num_dialogues` dialogues as
/// close as possible to `target_total` samples (at least one each).
pub fn balanced_subdialogue_count(target_total: usize, num_dialogues: usize) -> usize {
    if num_dialogues == 0 {
        return 0;
    }
    ((target_total as f64 / num_dialogues as f64).round() as usize).max(1)
}

/// Writes one JSON object per line.
pub fn write_augmentation_log(log: &[AugmentationRecord], path: impl AsRef<Path>) -> std::io::Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    for r in log {
        serde_json::to_writer(&mut f, r)?;
        f.write_all(b"\n")?;
    }
    f.flush()
}
