//! Feature files, manifests and checkpoints: round trips and the error
//! class of every malformed input.

use std::path::Path;

use proptest::prelude::*;
use xferlab_core::feature_store::{
    crc32, decode, encode, validate_manifest, write_feature_file, CorpusManifest, DialogueEntry, FeatureRef,
    FeatureTensor, FormatErrorKind, Label, Modality, Split, Task, ValidationOptions, ViolationKind,
};
use xferlab_core::model::{decode_checkpoint, encode_checkpoint, CheckpointError};
use xferlab_core::nn::{Matrix, ParamStore};

fn tensor(id: &str, utt: u32, block: u16, frames: usize, dim: usize) -> FeatureTensor {
    let data = Matrix::from_fn(frames, dim, |i, j| (i as f32 * 0.5 - j as f32 * 0.25).sin());
    FeatureTensor::new(id, utt, Modality::Acoustic, block, data)
}

/// Byte layout assembled field by field.
fn reference_bytes(t: &FeatureTensor) -> Vec<u8> {
    let mut b = b"SGFT".to_vec();
    b.extend(1u16.to_le_bytes());
    b.push(0);
    b.push(match t.modality {
        Modality::Acoustic => 0,
        Modality::Text => 1,
    });
    b.extend(t.block_index.to_le_bytes());
    b.extend((t.frames() as u32).to_le_bytes());
    b.extend((t.dim() as u32).to_le_bytes());
    b.extend(t.utterance_index.to_le_bytes());
    b.extend((t.dialogue_id.len() as u16).to_le_bytes());
    b.extend(t.dialogue_id.as_bytes());
    let payload: Vec<u8> = t.data.as_slice().iter().flat_map(|v| v.to_le_bytes()).collect();
    let crc = crc32fast::hash(&payload);
    b.extend(payload);
    b.extend(crc.to_le_bytes());
    b
}

fn header_len(t: &FeatureTensor) -> usize {
    24 + t.dialogue_id.len()
}

fn kind_of(bytes: &[u8]) -> FormatErrorKind {
    decode(bytes).expect_err("malformed input must not decode").kind()
}

/// Rewrites the payload checksum after a deliberate corruption.
fn reseal(bytes: &mut Vec<u8>, header: usize) {
    let n = bytes.len();
    let crc = crc32(&bytes[header..n - 4]);
    bytes[n - 4..].copy_from_slice(&crc.to_le_bytes());
}

#[test]
fn encoding_matches_field_layout() {
    let t = FeatureTensor::new("dlg-7", 3, Modality::Text, 12, Matrix::from_fn(2, 3, |i, j| (i * 3 + j) as f32));
    let (bytes, crc) = encode(&t).unwrap();
    assert_eq!(bytes, reference_bytes(&t));
    assert_eq!(bytes.len(), 24 + 5 + 2 * 3 * 4 + 4);
    assert_eq!(crc, u32::from_le_bytes(bytes[bytes.len() - 4..].try_into().unwrap()));
}

#[test]
fn each_corruption_maps_to_one_error_kind() {
    let t = tensor("d-1", 0, 5, 3, 4);
    let good = encode(&t).unwrap().0;
    let h = header_len(&t);
    let with = |f: &dyn Fn(&mut Vec<u8>)| {
        let mut b = good.clone();
        f(&mut b);
        b
    };

    assert_eq!(kind_of(&with(&|b| b[0] = b'X')), FormatErrorKind::BadMagic);
    assert_eq!(kind_of(&with(&|b| b[4] = 2)), FormatErrorKind::UnsupportedVersion);
    assert_eq!(kind_of(&with(&|b| b[6] = 1)), FormatErrorKind::UnsupportedDtype);
    assert_eq!(kind_of(&with(&|b| b[7] = 9)), FormatErrorKind::UnknownModality);
    assert_eq!(kind_of(&good[..20]), FormatErrorKind::TruncatedHeader);
    assert_eq!(kind_of(&good[..3]), FormatErrorKind::TruncatedHeader);
    assert_eq!(kind_of(&with(&|b| b[24] = 0xff)), FormatErrorKind::InvalidId);
    assert_eq!(kind_of(&with(&|b| b.push(0))), FormatErrorKind::LengthMismatch);
    assert_eq!(kind_of(&good[..good.len() - 1]), FormatErrorKind::LengthMismatch);
    // Declared T larger than the payload.
    assert_eq!(kind_of(&with(&|b| b[12] = 4)), FormatErrorKind::LengthMismatch);
    assert_eq!(kind_of(&with(&|b| b[h] ^= 1)), FormatErrorKind::ChecksumMismatch);
    assert_eq!(kind_of(&with(&|b| *b.last_mut().unwrap() ^= 0x80)), FormatErrorKind::ChecksumMismatch);
    let nan = with(&|b| {
        b[h..h + 4].copy_from_slice(&f32::NAN.to_le_bytes());
        reseal(b, h);
    });
    assert_eq!(kind_of(&nan), FormatErrorKind::NonFinite);
    let empty = {
        let mut b = good[..h].to_vec();
        b[12..16].copy_from_slice(&0u32.to_le_bytes());
        b.extend(crc32(&[]).to_le_bytes());
        b
    };
    assert_eq!(kind_of(&empty), FormatErrorKind::EmptyShape);
}

#[test]
fn encoding_rejects_invalid_tensors() {
    let mut t = tensor("x", 0, 0, 1, 2);
    t.data.as_mut_slice()[1] = f32::INFINITY;
    assert_eq!(encode(&t).unwrap_err().kind(), FormatErrorKind::NonFinite);
    let t = FeatureTensor::new("x", 0, Modality::Acoustic, 0, Matrix::zeros(0, 3));
    assert_eq!(encode(&t).unwrap_err().kind(), FormatErrorKind::EmptyShape);
    let t = FeatureTensor::new("y".repeat(70_000), 0, Modality::Acoustic, 0, Matrix::zeros(1, 1));
    assert_eq!(encode(&t).unwrap_err().kind(), FormatErrorKind::IdTooLong);
}

fn arb_tensor() -> impl Strategy<Value = FeatureTensor> {
    (
        "[a-zA-Z0-9_\\-é]{0,24}",
        any::<u32>(),
        prop_oneof![Just(Modality::Acoustic), Just(Modality::Text)],
        0u16..=24,
        1usize..12,
        1usize..20,
    )
        .prop_flat_map(|(id, utt, modality, block, t, d)| {
            prop::collection::vec(-1e30f32..1e30, t * d).prop_map(move |v| {
                FeatureTensor::new(id.clone(), utt, modality, block, Matrix::from_vec(t, d, v).unwrap())
            })
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn tensors_round_trip_bit_exactly(t in arb_tensor()) {
        let (bytes, _) = encode(&t).unwrap();
        prop_assert_eq!(&bytes, &reference_bytes(&t));
        let back = decode(&bytes).unwrap();
        prop_assert_eq!(&back, &t);
        let bits = |m: &Matrix<f32>| m.as_slice().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        prop_assert_eq!(bits(&back.data), bits(&t.data));
    }

    #[test]
    fn payload_bit_flips_fail_the_checksum(t in arb_tensor(), pos in any::<prop::sample::Index>(), bit in 0u8..8) {
        let (mut bytes, _) = encode(&t).unwrap();
        let h = header_len(&t);
        let i = h + pos.index(bytes.len() - h);
        bytes[i] ^= 1 << bit;
        prop_assert_eq!(kind_of(&bytes), FormatErrorKind::ChecksumMismatch);
    }

    #[test]
    fn every_strict_prefix_is_rejected(t in arb_tensor(), cut in any::<prop::sample::Index>()) {
        let (bytes, _) = encode(&t).unwrap();
        let n = cut.index(bytes.len());
        let kind = kind_of(&bytes[..n]);
        prop_assert!(matches!(kind, FormatErrorKind::TruncatedHeader | FormatErrorKind::LengthMismatch), "{:?}", kind);
    }
}

// Manifests.

const DIM: usize = 4;

fn write_dialogue(dir: &Path, id: &str, split: Split, label: Label, utterances: u32, blocks: &[u16]) -> DialogueEntry {
    let mut refs = Vec::new();
    for &block in blocks {
        for u in 0..utterances {
            let path = format!("{id}_b{block}_u{u}.sgft");
            let crc = write_feature_file(&tensor(id, u, block, 2 + u as usize, DIM), dir.join(&path)).unwrap();
            refs.push(FeatureRef { modality: Modality::Acoustic, block_index: block, path, checksum: crc });
        }
    }
    DialogueEntry { dialogue_id: id.into(), split, num_utterances: utterances as usize, label, feature_refs: refs }
}

fn fixture(dir: &Path) -> CorpusManifest {
    CorpusManifest {
        corpus_id: "fixture".into(),
        task: Task::Depression,
        dialogues: vec![
            write_dialogue(dir, "a", Split::Train, Label::depression(4.0), 3, &[1, 2]),
            write_dialogue(dir, "b", Split::Validation, Label::depression(0.0), 2, &[1, 2]),
            write_dialogue(dir, "c", Split::Test, Label::depression(24.0), 1, &[1, 2]),
        ],
    }
}

fn kinds(m: &CorpusManifest, dir: &Path) -> Vec<(String, ViolationKind)> {
    validate_manifest(m, dir, &ValidationOptions::default())
        .violations
        .into_iter()
        .map(|v| (v.dialogue_id, v.kind))
        .collect()
}

#[test]
fn well_formed_manifest_validates_and_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let m = fixture(dir.path());
    assert_eq!(kinds(&m, dir.path()), vec![]);
    let path = dir.path().join("manifest.json");
    m.save(&path).unwrap();
    assert_eq!(CorpusManifest::load(&path).unwrap(), m);
}

#[test]
fn each_manifest_defect_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let base = fixture(dir.path());
    let d = dir.path();
    let case = |f: &dyn Fn(&mut CorpusManifest)| {
        let mut m = base.clone();
        f(&mut m);
        kinds(&m, d)
    };
    let one = |id: &str, k| vec![(id.to_string(), k)];

    assert_eq!(case(&|m| m.dialogues.push(m.dialogues[0].clone())), one("a", ViolationKind::DuplicateDialogue));
    assert_eq!(
        case(&|m| {
            m.dialogues[1].num_utterances = 0;
            m.dialogues[1].feature_refs.clear();
        }),
        one("b", ViolationKind::EmptyDialogue)
    );
    assert_eq!(case(&|m| m.dialogues[2].label = Label::depression(24.5)), one("c", ViolationKind::InvalidLabel));
    assert_eq!(case(&|m| m.dialogues[2].label = Label::ad(true)), one("c", ViolationKind::InvalidLabel));
    assert_eq!(case(&|m| m.dialogues[0].feature_refs[0].path = "gone.sgft".into()), {
        let mut v = one("a", ViolationKind::MissingFile);
        v.push(("a".into(), ViolationKind::UtteranceCoverage));
        v
    });
    assert_eq!(case(&|m| m.dialogues[0].feature_refs[1].checksum ^= 1), one("a", ViolationKind::ChecksumMismatch));
    assert_eq!(case(&|m| m.dialogues[0].feature_refs[0].block_index = 2), {
        let mut v = one("a", ViolationKind::HeaderMismatch);
        v.extend([("a".into(), ViolationKind::UtteranceCoverage), ("a".into(), ViolationKind::UtteranceCoverage)]);
        v
    });
    assert_eq!(case(&|m| m.dialogues[1].num_utterances = 3), {
        let mut v = one("b", ViolationKind::UtteranceCoverage);
        v.push(("b".into(), ViolationKind::UtteranceCoverage));
        v
    });

    // A file whose bytes no longer decode. Coverage is only checked for
    // blocks with at least one readable file.
    std::fs::write(d.join("broken.sgft"), b"SGFT\x02\x00").unwrap();
    assert_eq!(
        case(&|m| m.dialogues[2].feature_refs[0].path = "broken.sgft".into()),
        one("c", ViolationKind::UnreadableFile(FormatErrorKind::UnsupportedVersion))
    );
    assert_eq!(case(&|m| m.dialogues[0].feature_refs[2].path = "broken.sgft".into()), {
        let mut v = one("a", ViolationKind::UnreadableFile(FormatErrorKind::UnsupportedVersion));
        v.push(("a".into(), ViolationKind::UtteranceCoverage));
        v
    });

    // A feature dimension that disagrees with the rest of the corpus.
    let odd = FeatureTensor::new("c", 0, Modality::Acoustic, 2, Matrix::zeros(2, DIM + 1));
    let crc = write_feature_file(&odd, d.join("odd.sgft")).unwrap();
    assert_eq!(
        case(&|m| {
            let r = &mut m.dialogues[2].feature_refs[1];
            r.path = "odd.sgft".into();
            r.checksum = crc;
        }),
        one("c", ViolationKind::DimInconsistent)
    );
}

#[test]
fn malformed_manifest_json_is_a_parse_error() {
    assert!(CorpusManifest::from_json("{\"corpus_id\": 1}").is_err());
    assert!(CorpusManifest::from_json("[]").is_err());
}

// Checkpoints.

fn store() -> ParamStore<f32> {
    let mut s = ParamStore::new();
    s.add("layer.weight", Matrix::from_fn(3, 2, |i, j| i as f32 - 0.5 * j as f32));
    s.add("layer.bias", Matrix::from_vec(1, 2, vec![f32::MIN_POSITIVE, -0.0]).unwrap());
    s
}

#[test]
fn checkpoints_round_trip_and_detect_damage() {
    let meta = serde_json::json!({"architecture": "ad", "seed": 3});
    let bytes = encode_checkpoint(&meta, &store()).unwrap();
    let (m, s) = decode_checkpoint(&bytes).unwrap();
    assert_eq!(m, meta);
    assert_eq!(s.iter().map(|(n, _)| n.to_string()).collect::<Vec<_>>(), ["layer.weight", "layer.bias"]);
    let bits = |s: &ParamStore<f32>| s.values().iter().flat_map(|m| m.as_slice().iter().map(|v| v.to_bits())).collect::<Vec<_>>();
    assert_eq!(bits(&s), bits(&store()));

    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(matches!(decode_checkpoint(&bad), Err(CheckpointError::BadMagic)));
    let mut bad = bytes.clone();
    bad[20] ^= 4;
    assert!(matches!(decode_checkpoint(&bad), Err(CheckpointError::ChecksumMismatch { .. })));
    assert!(matches!(decode_checkpoint(&bytes[..bytes.len() - 5]), Err(CheckpointError::Truncated | CheckpointError::ChecksumMismatch { .. })));
    assert!(matches!(decode_checkpoint(&bytes[..10]), Err(CheckpointError::Truncated)));
    assert!(matches!(decode_checkpoint(&bytes[..3]), Err(CheckpointError::BadMagic)));
}
