//! Experiment wiring: manifests to pooled corpora to model-ready splits,
//! then single-task, dep-only, joint and probing runs.

mod outputs;

pub use outputs::{
    build_reports, load_mode_report, load_probe_report, write_json, write_metadata, write_mode, write_probe,
    write_reports, ReportSet,
};

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::corpus::{
    augment_corpus, balanced_subdialogue_count, AugmentationConfig, Corpus, CorpusError, FeatureGroup, InputSpec,
    PooledCorpus, Pooling,
};
use crate::evalreport::{blockwise_probe, ProbeConfig, ProbeReport, TransferRow, TransferTable};
use crate::feature_store::{Modality, Split, ValidationOptions};
use crate::model::{AdModel, JointModel, ModelConfig};
use crate::trainer::{multi_seed, MultiSeedOutcome, RunReport, TrainConfig, TrainData, TrainError};

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("invalid experiment config: {0}")]
    Config(String),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Synth(#[from] crate::synthgen::SynthError),
    #[error(transparent)]
    Checkpoint(#[from] crate::model::CheckpointError),
    #[error("report invariants failed: {}", .0.join("; "))]
    Invariants(Vec<String>),
    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

/// Coarse failure class, used for process exit codes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FailureClass {
    Validation,
    Divergence,
    Io,
}

impl PipelineError {
    pub fn class(&self) -> FailureClass {
        let io_corpus = |e: &CorpusError| {
            matches!(e, CorpusError::Io(_) | CorpusError::Manifest(_) | CorpusError::Format(crate::feature_store::FormatError::Io(_)))
        };
        match self {
            PipelineError::Io(_) => FailureClass::Io,
            PipelineError::Corpus(e) if io_corpus(e) => FailureClass::Io,
            PipelineError::Synth(crate::synthgen::SynthError::Io(_)) => FailureClass::Io,
            PipelineError::Checkpoint(crate::model::CheckpointError::Io(_)) => FailureClass::Io,
            PipelineError::Train(TrainError::Io(_)) => FailureClass::Io,
            PipelineError::Train(e) if e.is_divergence() => FailureClass::Divergence,
            _ => FailureClass::Validation,
        }
    }
}

/// Training mode for the downstream model.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Single,
    DepOnly,
    Joint,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Single => "single",
            Mode::DepOnly => "dep_only",
            Mode::Joint => "joint",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProbeSettings {
    pub model_tag: String,
    /// Blocks with their own row; `None` probes every acoustic block.
    pub blocks: Option<Vec<u16>>,
    pub weighted: bool,
}

impl Default for ProbeSettings {
    fn default() -> Self {
        Self { model_tag: "speech".into(), blocks: None, weighted: true }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Relative paths resolve against the config file's directory.
    pub ad_manifest: Option<PathBuf>,
    pub dep_manifest: Option<PathBuf>,
    pub ad_input: InputSpec,
    pub dep_input: InputSpec,
    pub pooling: Pooling,
    /// `None` trains on whole dialogues.
    pub augmentation: Option<AugmentationConfig>,
    /// In joint mode, size the depression augmentation so both corpora
    /// contribute about the same number of training samples.
    pub balance_augmentation: bool,
    /// Start the severity head's output bias at the training-set mean
    /// severity instead of zero.
    pub init_severity_offset: bool,
    pub train: TrainConfig,
    pub model: ModelConfig,
    pub probe: ProbeSettings,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            ad_manifest: None,
            dep_manifest: None,
            ad_input: InputSpec::acoustic_text(11, 12),
            dep_input: InputSpec::single(FeatureGroup::acoustic(9)),
            pooling: Pooling::Mean,
            augmentation: Some(AugmentationConfig::default()),
            balance_augmentation: true,
            init_severity_offset: true,
            train: TrainConfig::default(),
            model: ModelConfig::default(),
            probe: ProbeSettings::default(),
        }
    }
}

impl ExperimentConfig {
    /// JSON, or TOML when the text does not start with `{`.
    pub fn from_text(text: &str) -> Result<Self, PipelineError> {
        let cfg: Self = if text.trim_start().starts_with('{') {
            serde_json::from_str(text).map_err(|e| PipelineError::Config(e.to_string()))?
        } else {
            toml::from_str(text).map_err(|e| PipelineError::Config(e.to_string()))?
        };
        cfg.train.validate()?;
        Ok(cfg)
    }

    /// Loads a config and makes its manifest paths absolute.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, PipelineError> {
        let path = path.as_ref();
        let mut cfg = Self::from_text(&std::fs::read_to_string(path)?)?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        for p in [&mut cfg.ad_manifest, &mut cfg.dep_manifest].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig { dropout_p: self.train.dropout_p, ..self.model.clone() }
    }
}

/// Pooled corpora loaded from the configured manifests.
#[derive(Clone, Debug, Default)]
pub struct Sources {
    pub ad: Option<PooledCorpus>,
    pub dep: Option<PooledCorpus>,
}

impl Sources {
    pub fn load(cfg: &ExperimentConfig) -> Result<Self, PipelineError> {
        let opts = ValidationOptions::default();
        let load = |p: &Option<PathBuf>| -> Result<Option<PooledCorpus>, PipelineError> {
            p.as_ref().map(|p| PooledCorpus::load(p, &opts, cfg.pooling)).transpose().map_err(Into::into)
        };
        Ok(Self { ad: load(&cfg.ad_manifest)?, dep: load(&cfg.dep_manifest)? })
    }
}

/// Assembles the requested streams and, when configured, replaces the train
/// split with `per_dialogue` sub-dialogues per dialogue.
pub fn prepare_corpus(
    pooled: &PooledCorpus,
    input: &InputSpec,
    augmentation: Option<&AugmentationConfig>,
) -> Result<Corpus, PipelineError> {
    let mut corpus = pooled.assemble(input)?;
    if let Some(aug) = augmentation {
        corpus.train = augment_corpus(&corpus.train, Split::Train, aug)?.samples;
    }
    Ok(corpus)
}

/// Model-ready corpora for a mode, with the balancing rule applied.
pub fn prepare_mode(cfg: &ExperimentConfig, src: &Sources, mode: Mode) -> Result<(Option<Corpus>, Option<Corpus>), PipelineError> {
    let need = |c: &Option<PooledCorpus>, what: &str| {
        c.clone().ok_or_else(|| PipelineError::Config(format!("{} mode needs a {what} manifest", mode.as_str())))
    };
    let aug = cfg.augmentation.as_ref();
    Ok(match mode {
        Mode::Single => (Some(prepare_corpus(&need(&src.ad, "AD")?, &cfg.ad_input, aug)?), None),
        Mode::DepOnly => (None, Some(prepare_corpus(&need(&src.dep, "depression")?, &cfg.dep_input, aug)?)),
        Mode::Joint => {
            let ad_pooled = need(&src.ad, "AD")?;
            let dep_pooled = need(&src.dep, "depression")?;
            let ad = prepare_corpus(&ad_pooled, &cfg.ad_input, aug)?;
            let dep_aug = match aug {
                Some(a) if cfg.balance_augmentation => {
                    let dep_train = dep_pooled.dialogues.iter().filter(|d| d.split == Split::Train).count();
                    let per = balanced_subdialogue_count(ad.train.len(), dep_train);
                    Some(AugmentationConfig { balance_target: Some(per), ..a.clone() })
                }
                other => other.cloned(),
            };
            let dep = prepare_corpus(&dep_pooled, &cfg.dep_input, dep_aug.as_ref())?;
            (Some(ad), Some(dep))
        }
    })
}

/// Mean severity over a corpus's train split.
pub fn mean_train_severity(c: &Corpus) -> Option<f64> {
    let v: Vec<f64> = c.train.iter().filter_map(|s| s.label.depression_severity).collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

fn width(c: &Corpus, what: &str) -> Result<usize, PipelineError> {
    c.input_dim().ok_or_else(|| PipelineError::Config(format!("{what} corpus is empty")))
}

/// Result of a multi-seed run in any mode, with per-seed selected params
/// in checkpoint form.
pub struct ModeOutcome {
    pub mode: Mode,
    pub report: RunReport,
    /// Per seed: checkpoint metadata and parameters.
    pub checkpoints: Vec<(serde_json::Value, crate::nn::ParamStore<f32>)>,
    pub train_sizes: TrainSizes,
}

/// Training-sample counts after augmentation.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainSizes {
    pub ad: Option<usize>,
    pub dep: Option<usize>,
}

fn collect<M: crate::model::Downstream<f32>>(mode: Mode, sizes: TrainSizes, o: MultiSeedOutcome<M>) -> ModeOutcome {
    let checkpoints = o
        .models
        .iter()
        .zip(&o.report.runs)
        .map(|(m, r)| {
            let mut meta = m.checkpoint_meta();
            meta["seed"] = r.seed.into();
            meta["best_epoch"] = r.best_epoch.into();
            (meta, m.store().clone())
        })
        .collect();
    ModeOutcome { mode, report: o.report, checkpoints, train_sizes: sizes }
}

/// Trains every configured seed in `mode`.
pub fn run_mode(cfg: &ExperimentConfig, src: &Sources, mode: Mode) -> Result<ModeOutcome, PipelineError> {
    let (ad, dep) = prepare_mode(cfg, src, mode)?;
    let sizes = TrainSizes { ad: ad.as_ref().map(|c| c.train.len()), dep: dep.as_ref().map(|c| c.train.len()) };
    let mc = cfg.model_config();
    let offset = if cfg.init_severity_offset { dep.as_ref().and_then(mean_train_severity) } else { None };
    let joint_init = |ad_dim: usize, dep_dim: usize, r: &mut rand_chacha::ChaCha8Rng| {
        let mut m = JointModel::init(ad_dim, dep_dim, mc.clone(), r)?;
        if let Some(v) = offset {
            m.set_severity_offset(v);
        }
        Ok(m)
    };
    Ok(match mode {
        Mode::Single => {
            let ad = ad.expect("prepared");
            let d = width(&ad, "AD")?;
            collect(mode, sizes, multi_seed(&cfg.train, TrainData::single(&ad), |r| AdModel::init(d, mc.clone(), r))?)
        }
        Mode::DepOnly => {
            let dep = dep.expect("prepared");
            let d = width(&dep, "depression")?;
            // The AD branch is never fed; its width is irrelevant.
            collect(mode, sizes, multi_seed(&cfg.train, TrainData::dep_only(&dep), |r| joint_init(1, d, r))?)
        }
        Mode::Joint => {
            let (ad, dep) = (ad.expect("prepared"), dep.expect("prepared"));
            let (da, dd) = (width(&ad, "AD")?, width(&dep, "depression")?);
            collect(
                mode,
                sizes,
                multi_seed(&cfg.train, TrainData::joint(&ad, &dep), |r| joint_init(da, dd, r))?,
            )
        }
    })
}

/// Transfer-table rows in the order single, dep-only, joint, for whichever
/// reports exist.
pub fn transfer_table(single: Option<&RunReport>, dep_only: Option<&RunReport>, joint: Option<&RunReport>) -> TransferTable {
    let mut rows = Vec::new();
    if let Some(r) = single {
        rows.push(TransferRow { ad: true, dep: false, aggregate: r.aggregate });
    }
    if let Some(r) = dep_only {
        rows.push(TransferRow { ad: false, dep: true, aggregate: r.aggregate });
    }
    if let Some(r) = joint {
        rows.push(TransferRow { ad: true, dep: true, aggregate: r.aggregate });
    }
    TransferTable { rows }
}

/// Block-wise probe over every acoustic block of the AD corpus.
pub fn run_probe(cfg: &ExperimentConfig, src: &Sources, blocks: Option<&[u16]>) -> Result<ProbeReport, PipelineError> {
    let ad = src.ad.as_ref().ok_or_else(|| PipelineError::Config("probing needs an AD manifest".into()))?;
    let available: Vec<u16> = ad
        .common_groups()
        .into_iter()
        .filter(|g| g.modality == Modality::Acoustic)
        .map(|g| g.block_index)
        .collect();
    if available.is_empty() {
        return Err(PipelineError::Config("AD corpus has no acoustic blocks".into()));
    }
    let aug = cfg.augmentation.as_ref();
    let corpora = available
        .iter()
        .map(|&b| Ok((b, prepare_corpus(ad, &InputSpec::single(FeatureGroup::acoustic(b)), aug)?)))
        .collect::<Result<Vec<_>, PipelineError>>()?;
    let probe_blocks = blocks.map(<[u16]>::to_vec).or_else(|| cfg.probe.blocks.clone());
    let pc = ProbeConfig {
        model_tag: cfg.probe.model_tag.clone(),
        train: cfg.train.clone(),
        model: cfg.model.clone(),
        probe_blocks,
        weighted: cfg.probe.weighted,
    };
    Ok(blockwise_probe(&corpora, &pc)?)
}
