//! Synthetic AD/depression corpus pairs from a linear-Gaussian generative
//! model, with the closed-form decision rule of that model as an oracle.
//!
//! Per dialogue: `z_a ~ N(0, I)`, `z_d = ρ·z_a + √(1−ρ²)·ξ`, and
//! `u = [z_a; z_d]`. The AD label is `w·z_a + τ·ε > 0`; the severity is
//! `clip(centre + scale·(w·z_d + τ·ε′), 0, max)`. Every pooled utterance row
//! of an informative block is `M_b·u + σ·η`; frames add zero-mean jitter
//! around that row. Non-informative blocks are standard normal noise.

mod generate;
mod oracle;

pub use generate::{gen_pair, generate, write_pair, DialogueTruth, GeneratedPair, SynthData, SynthDialogue};
pub use oracle::{linear_probe_f1, oracle_label, oracle_labels, Oracle};

use serde::{Deserialize, Serialize};

use crate::corpus::FeatureGroup;
use crate::feature_store::Modality;

#[derive(Debug, thiserror::Error)]
pub enum SynthError {
    #[error("invalid synthetic spec: {0}")]
    Spec(String),
    #[error("pooled features have width {got}, the SynthSpec implies {expected}")]
    DimMismatch { got: usize, expected: usize },
    #[error(transparent)]
    Format(#[from] crate::feature_store::FormatError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitCounts {
    pub train: usize,
    pub validation: usize,
    pub test: usize,
}

impl SplitCounts {
    pub fn total(&self) -> usize {
        self.train + self.validation + self.test
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    pub ad_dialogues: SplitCounts,
    pub dep_dialogues: SplitCounts,
    /// Inclusive range of utterances per dialogue.
    pub n_range: (usize, usize),
    /// Inclusive range of frames per utterance.
    pub frames_range: (usize, usize),
    /// Acoustic feature width.
    pub dim: usize,
    /// Text feature width; `None` emits no text modality.
    pub text_dim: Option<usize>,
    pub text_block: u16,
    pub latent_dim: usize,
    pub shared_rho: f64,
    /// Standard deviation of the per-utterance row noise.
    pub noise_sigma: f64,
    /// Standard deviation of the noise inside the label and severity scores.
    pub label_noise: f64,
    /// Standard deviation of the zero-mean per-frame jitter.
    pub frame_jitter: f64,
    /// Acoustic blocks are numbered `1..=num_blocks`.
    pub num_blocks: u16,
    /// Only this block carries signal; `None` makes every block informative.
    pub informative_block: Option<u16>,
    pub severity_centre: f64,
    pub severity_scale: f64,
    pub severity_max: f64,
    /// Draw AD dialogues until each split is as close to half positive as
    /// its size allows.
    pub balance_classes: bool,
    pub rng_seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            ad_dialogues: SplitCounts { train: 40, validation: 10, test: 20 },
            dep_dialogues: SplitCounts { train: 40, validation: 10, test: 20 },
            n_range: (10, 26),
            frames_range: (2, 4),
            dim: 16,
            text_dim: Some(16),
            text_block: 12,
            latent_dim: 4,
            shared_rho: 0.5,
            noise_sigma: 0.5,
            label_noise: 0.0,
            frame_jitter: 0.1,
            num_blocks: 12,
            informative_block: None,
            severity_centre: 12.0,
            severity_scale: 5.0,
            severity_max: 24.0,
            balance_classes: true,
            rng_seed: 0,
        }
    }
}

impl SynthSpec {
    /// JSON, or TOML when the text does not start with `{`.
    pub fn from_text(text: &str) -> Result<Self, SynthError> {
        let spec: Self = if text.trim_start().starts_with('{') {
            serde_json::from_str(text)?
        } else {
            toml::from_str(text).map_err(|e| SynthError::Spec(e.to_string()))?
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self, SynthError> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::Spec(m));
        if self.n_range.0 == 0 || self.n_range.0 > self.n_range.1 {
            return bad(format!("n_range {:?} must satisfy 1 ≤ min ≤ max", self.n_range));
        }
        if self.frames_range.0 == 0 || self.frames_range.0 > self.frames_range.1 {
            return bad(format!("frames_range {:?} must satisfy 1 ≤ min ≤ max", self.frames_range));
        }
        if self.dim == 0 || self.latent_dim == 0 || self.text_dim == Some(0) {
            return bad("dimensions must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.shared_rho) {
            return bad(format!("shared_rho {} outside [0, 1]", self.shared_rho));
        }
        for (name, v) in [
            ("noise_sigma", self.noise_sigma),
            ("label_noise", self.label_noise),
            ("frame_jitter", self.frame_jitter),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{name} must be finite and non-negative"));
            }
        }
        if self.num_blocks == 0 {
            return bad("num_blocks must be at least 1".into());
        }
        if let Some(b) = self.informative_block {
            if b == 0 || b > self.num_blocks {
                return bad(format!("informative_block {b} outside 1..={}", self.num_blocks));
            }
        }
        if !(self.severity_max > 0.0 && self.severity_scale >= 0.0) {
            return bad("severity range must be positive".into());
        }
        if self.ad_dialogues.total() == 0 && self.dep_dialogues.total() == 0 {
            return bad("no dialogues requested".into());
        }
        Ok(())
    }

    pub fn is_informative(&self, block: u16) -> bool {
        self.informative_block.is_none_or(|b| b == block)
    }

    /// Every feature stream the generator emits.
    pub fn groups(&self) -> Vec<FeatureGroup> {
        let mut g: Vec<FeatureGroup> = (1..=self.num_blocks).map(FeatureGroup::acoustic).collect();
        if self.text_dim.is_some() {
            g.push(FeatureGroup::text(self.text_block));
        }
        g
    }

    pub fn group_dim(&self, group: FeatureGroup) -> usize {
        match group.modality {
            Modality::Acoustic => self.dim,
            Modality::Text => self.text_dim.unwrap_or(0),
        }
    }
}
