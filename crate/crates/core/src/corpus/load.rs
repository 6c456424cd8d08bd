use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{pool_with, Corpus, CorpusError, DialogueSample, Pooling};
use crate::feature_store::{
    read_feature_file, validate_manifest, CorpusManifest, Label, Modality, Split, Task, ValidationOptions,
};
use crate::nn::Matrix;

/// One (modality, block) feature stream.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct FeatureGroup {
    pub modality: Modality,
    pub block_index: u16,
}

impl FeatureGroup {
    pub fn acoustic(block_index: u16) -> Self {
        Self { modality: Modality::Acoustic, block_index }
    }

    pub fn text(block_index: u16) -> Self {
        Self { modality: Modality::Text, block_index }
    }
}

/// Which pooled streams form the model input, concatenated left to right.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputSpec {
    pub groups: Vec<FeatureGroup>,
}

impl InputSpec {
    pub fn single(group: FeatureGroup) -> Self {
        Self { groups: vec![group] }
    }

    /// Acoustic block `block` followed by text block `text_block`.
    pub fn acoustic_text(block: u16, text_block: u16) -> Self {
        Self { groups: vec![FeatureGroup::acoustic(block), FeatureGroup::text(text_block)] }
    }

    /// Blocks of one modality stacked side by side, for learned block weighting.
    pub fn stack(modality: Modality, blocks: &[u16]) -> Self {
        Self { groups: blocks.iter().map(|&b| FeatureGroup { modality, block_index: b }).collect() }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PooledDialogue {
    pub dialogue_id: String,
    pub split: Split,
    pub label: Label,
    pub groups: BTreeMap<FeatureGroup, Matrix<f32>>,
}

/// Corpus with every referenced utterance already pooled, keyed by stream.
#[derive(Clone, Debug, PartialEq)]
pub struct PooledCorpus {
    pub corpus_id: String,
    pub task: Task,
    pub dialogues: Vec<PooledDialogue>,
}

impl PooledCorpus {
    /// Reads, validates and pools a manifest from disk.
    pub fn load(manifest_path: impl AsRef<Path>, opts: &ValidationOptions, pooling: Pooling) -> Result<Self, CorpusError> {
        let path = manifest_path.as_ref();
        let manifest = CorpusManifest::load(path)?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        let report = validate_manifest(&manifest, base, opts);
        if !report.is_valid() {
            return Err(CorpusError::Invalid(report));
        }
        Self::from_manifest(&manifest, base, pooling)
    }

    /// Pools a manifest assumed valid.
    pub fn from_manifest(manifest: &CorpusManifest, base_dir: &Path, pooling: Pooling) -> Result<Self, CorpusError> {
        let mut dialogues = Vec::with_capacity(manifest.dialogues.len());
        for d in &manifest.dialogues {
            let mut rows: BTreeMap<FeatureGroup, Vec<(u32, Vec<f32>)>> = BTreeMap::new();
            for r in &d.feature_refs {
                let t = read_feature_file(CorpusManifest::resolve(base_dir, r))?;
                let pooled = pool_with(&t.data, pooling)?;
                rows.entry(FeatureGroup { modality: r.modality, block_index: r.block_index })
                    .or_default()
                    .push((t.utterance_index, pooled));
            }
            let mut groups = BTreeMap::new();
            for (g, mut v) in rows {
                v.sort_by_key(|(i, _)| *i);
                let m: Vec<Vec<f32>> = v.into_iter().map(|(_, r)| r).collect();
                let m = Matrix::from_rows(&m).map_err(|e| CorpusError::Dialogue {
                    dialogue_id: d.dialogue_id.clone(),
                    message: e.to_string(),
                })?;
                groups.insert(g, m);
            }
            dialogues.push(PooledDialogue {
                dialogue_id: d.dialogue_id.clone(),
                split: d.split,
                label: d.label,
                groups,
            });
        }
        Ok(Self { corpus_id: manifest.corpus_id.clone(), task: manifest.task, dialogues })
    }

    /// Streams present in every dialogue.
    pub fn common_groups(&self) -> BTreeSet<FeatureGroup> {
        let mut it = self.dialogues.iter();
        let Some(first) = it.next() else { return BTreeSet::new() };
        let mut set: BTreeSet<FeatureGroup> = first.groups.keys().copied().collect();
        for d in it {
            set.retain(|g| d.groups.contains_key(g));
        }
        set
    }

    /// Builds model-ready samples by concatenating the requested streams.
    pub fn assemble(&self, spec: &InputSpec) -> Result<Corpus, CorpusError> {
        if spec.groups.is_empty() {
            return Err(CorpusError::Config("input spec selects no feature streams".into()));
        }
        let mut corpus = Corpus {
            corpus_id: self.corpus_id.clone(),
            task: self.task,
            train: Vec::new(),
            validation: Vec::new(),
            test: Vec::new(),
        };
        for d in &self.dialogues {
            let parts = spec
                .groups
                .iter()
                .map(|g| {
                    d.groups.get(g).ok_or_else(|| CorpusError::Dialogue {
                        dialogue_id: d.dialogue_id.clone(),
                        message: format!("no {:?} features for block {}", g.modality, g.block_index),
                    })
                })
                .collect::<Result<Vec<_>, _>>()?;
            let features = Matrix::hcat(&parts).map_err(|e| CorpusError::Dialogue {
                dialogue_id: d.dialogue_id.clone(),
                message: e.to_string(),
            })?;
            let sample = DialogueSample {
                dialogue_id: d.dialogue_id.clone(),
                utterance_features: features,
                label: d.label,
                source_task: self.task,
            };
            match d.split {
                Split::Train => corpus.train.push(sample),
                Split::Validation => corpus.validation.push(sample),
                Split::Test => corpus.test.push(sample),
            }
        }
        Ok(corpus)
    }
}
