//! Corpus manifests and their validation.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::format::{read_feature_file, FormatErrorKind, Modality};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Ad,
    Depression,
}

impl Task {
    pub fn as_str(self) -> &'static str {
        match self {
            Task::Ad => "ad",
            Task::Depression => "depression",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Validation,
    Test,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Label {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ad_positive: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub depression_severity: Option<f64>,
}

impl Label {
    pub fn ad(positive: bool) -> Self {
        Self { ad_positive: Some(positive), depression_severity: None }
    }

    pub fn depression(severity: f64) -> Self {
        Self { ad_positive: None, depression_severity: Some(severity) }
    }

    /// Problems with this label, given the allowed severity range.
    pub fn problems(&self, severity_range: (f64, f64)) -> Vec<String> {
        let mut out = Vec::new();
        if self.ad_positive.is_none() && self.depression_severity.is_none() {
            out.push("label has neither ad_positive nor depression_severity".to_string());
        }
        if let Some(s) = self.depression_severity {
            if !s.is_finite() || s < severity_range.0 || s > severity_range.1 {
                out.push(format!(
                    "depression_severity {s} outside [{}, {}]",
                    severity_range.0, severity_range.1
                ));
            }
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureRef {
    pub modality: Modality,
    pub block_index: u16,
    /// Relative paths resolve against the manifest's directory.
    pub path: String,
    pub checksum: u32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DialogueEntry {
    pub dialogue_id: String,
    pub split: Split,
    pub num_utterances: usize,
    pub label: Label,
    pub feature_refs: Vec<FeatureRef>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusManifest {
    pub corpus_id: String,
    pub task: Task,
    pub dialogues: Vec<DialogueEntry>,
}

#[derive(Debug, thiserror::Error)]
pub enum ManifestError {
    #[error("cannot read manifest {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("manifest {path} is not valid JSON: {source}")]
    Parse { path: PathBuf, source: serde_json::Error },
}

impl CorpusManifest {
    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ManifestError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|source| ManifestError::Io { path: path.into(), source })?;
        Self::from_json(&text).map_err(|source| ManifestError::Parse { path: path.into(), source })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> std::io::Result<()> {
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        fs::write(path, text + "\n")
    }

    pub fn resolve(base_dir: &Path, r: &FeatureRef) -> PathBuf {
        let p = Path::new(&r.path);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            base_dir.join(p)
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolationKind {
    DuplicateDialogue,
    EmptyDialogue,
    InvalidLabel,
    MissingFile,
    UnreadableFile(FormatErrorKind),
    ChecksumMismatch,
    HeaderMismatch,
    UtteranceCoverage,
    DimInconsistent,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub dialogue_id: String,
    pub kind: ViolationKind,
    pub message: String,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

#[derive(Clone, Copy, Debug)]
pub struct ValidationOptions {
    pub severity_range: (f64, f64),
}

impl Default for ValidationOptions {
    fn default() -> Self {
        Self { severity_range: (0.0, 24.0) }
    }
}

/// Lists every invariant violation of `manifest`, resolving relative feature
/// paths against `base_dir`. Violations are ordered by dialogue id, then by
/// the order in which they were detected. The files are only read.
pub fn validate_manifest(manifest: &CorpusManifest, base_dir: &Path, opts: &ValidationOptions) -> ValidationReport {
    let mut found: Vec<Violation> = Vec::new();
    let mut push = |id: &str, kind, message: String| {
        found.push(Violation { dialogue_id: id.to_string(), kind, message });
    };

    let mut seen = HashSet::new();
    // (modality, block) -> list of (dialogue_id, path, D)
    let mut dims: BTreeMap<(Modality, u16), Vec<(String, String, usize)>> = BTreeMap::new();

    for d in &manifest.dialogues {
        let id = d.dialogue_id.as_str();
        if !seen.insert(id) {
            push(id, ViolationKind::DuplicateDialogue, format!("dialogue_id {id} appears more than once"));
            continue;
        }
        if d.num_utterances == 0 {
            push(id, ViolationKind::EmptyDialogue, "num_utterances is 0".into());
        }
        for p in d.label.problems(opts.severity_range) {
            push(id, ViolationKind::InvalidLabel, p);
        }
        match manifest.task {
            Task::Ad if d.label.ad_positive.is_none() => {
                push(id, ViolationKind::InvalidLabel, "AD corpus dialogue lacks ad_positive".into())
            }
            Task::Depression if d.label.depression_severity.is_none() => push(
                id,
                ViolationKind::InvalidLabel,
                "depression corpus dialogue lacks depression_severity".into(),
            ),
            _ => {}
        }

        let mut coverage: BTreeMap<(Modality, u16), Vec<u32>> = BTreeMap::new();
        for r in &d.feature_refs {
            let path = CorpusManifest::resolve(base_dir, r);
            if !path.exists() {
                push(id, ViolationKind::MissingFile, format!("missing feature file {}", r.path));
                continue;
            }
            let tensor = match read_feature_file(&path) {
                Ok(t) => t,
                Err(e) => {
                    push(id, ViolationKind::UnreadableFile(e.kind()), format!("{}: {e}", r.path));
                    continue;
                }
            };
            let (_, crc) = super::format::encode(&tensor).expect("decoded tensors re-encode");
            if crc != r.checksum {
                push(
                    id,
                    ViolationKind::ChecksumMismatch,
                    format!("{}: manifest checksum {:#010x}, file {crc:#010x}", r.path, r.checksum),
                );
            }
            if tensor.dialogue_id != d.dialogue_id || tensor.modality != r.modality || tensor.block_index != r.block_index
            {
                push(
                    id,
                    ViolationKind::HeaderMismatch,
                    format!(
                        "{}: header says ({}, {:?}, block {}), manifest says ({id}, {:?}, block {})",
                        r.path, tensor.dialogue_id, tensor.modality, tensor.block_index, r.modality, r.block_index
                    ),
                );
            }
            coverage.entry((r.modality, r.block_index)).or_default().push(tensor.utterance_index);
            dims.entry((r.modality, r.block_index)).or_default().push((
                id.to_string(),
                r.path.clone(),
                tensor.dim(),
            ));
        }
        for ((modality, block), mut idx) in coverage {
            idx.sort_unstable();
            let want: Vec<u32> = (0..d.num_utterances as u32).collect();
            if idx != want {
                push(
                    id,
                    ViolationKind::UtteranceCoverage,
                    format!(
                        "{modality:?} block {block}: utterance indices {idx:?} do not cover 0..{}",
                        d.num_utterances
                    ),
                );
            }
        }
    }

    for ((modality, block), entries) in &dims {
        let mut counts: HashMap<usize, usize> = HashMap::new();
        for (_, _, dim) in entries {
            *counts.entry(*dim).or_default() += 1;
        }
        let reference = counts
            .iter()
            .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0)))
            .map(|(d, _)| *d)
            .expect("non-empty group");
        for (id, path, dim) in entries {
            if *dim != reference {
                push(
                    id,
                    ViolationKind::DimInconsistent,
                    format!("{path}: {modality:?} block {block} has D={dim}, corpus uses D={reference}"),
                );
            }
        }
    }

    found.sort_by(|a, b| a.dialogue_id.cmp(&b.dialogue_id));
    ValidationReport { violations: found }
}
