//! On-disk interchange format for per-utterance, per-block features and
//! the corpus manifests that index them.

mod format;
mod manifest;

pub use format::{
    crc32, decode, encode, read_feature_file, write_feature_file, Dtype, FeatureTensor, FormatError,
    FormatErrorKind, Modality, MAGIC, VERSION,
};
pub use manifest::{
    validate_manifest, CorpusManifest, DialogueEntry, FeatureRef, Label, ManifestError, Split, Task,
    ValidationOptions, ValidationReport, Violation, ViolationKind,
};
