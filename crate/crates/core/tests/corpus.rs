//! Pooling, feature assembly and sub-dialogue augmentation.

use std::collections::HashMap;
use std::path::Path;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF};
use xferlab_core::corpus::{
    augment_corpus, balanced_subdialogue_count, min_window, pool_with, sample_subdialogue, AugmentationConfig,
    CorpusError, DialogueSample, FeatureGroup, InputSpec, PooledCorpus, Pooling,
};
use xferlab_core::feature_store::{
    write_feature_file, CorpusManifest, DialogueEntry, FeatureRef, FeatureTensor, Label, Modality, Split, Task,
    ValidationOptions,
};
use xferlab_core::nn::Matrix;

fn chi_square_p(observed: &[u64], expected: &[f64]) -> f64 {
    let stat: f64 = observed.iter().zip(expected).map(|(&o, &e)| (o as f64 - e).powi(2) / e).sum();
    1.0 - ChiSquared::new((observed.len() - 1) as f64).unwrap().cdf(stat)
}

#[test]
fn windows_of_eighteen_follow_the_two_stage_law() {
    const N: usize = 18;
    const DRAWS: usize = 100_000;
    let cfg = AugmentationConfig::default();
    let lmin = min_window(N, cfg.min_fraction);
    assert_eq!(lmin, 9);
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut by_len = vec![0u64; N + 1];
    let mut by_window: HashMap<(usize, usize), u64> = HashMap::new();
    for _ in 0..DRAWS {
        let (a, b) = sample_subdialogue(N, &cfg, &mut rng);
        assert!(1 <= a && a <= b && b <= N);
        let len = b - a + 1;
        assert!((lmin..=N).contains(&len));
        by_len[len] += 1;
        *by_window.entry((a, b)).or_default() += 1;
    }
    let lengths = N - lmin + 1;
    let obs: Vec<u64> = by_len[lmin..].to_vec();
    let p = chi_square_p(&obs, &vec![DRAWS as f64 / lengths as f64; lengths]);
    assert!(p > 0.01, "length law rejected, p = {p}");

    // P(a, b) = 1/10 · 1/(N − L + 1) over all 55 legal windows.
    let (mut obs, mut exp) = (vec![], vec![]);
    for len in lmin..=N {
        for a in 1..=N - len + 1 {
            obs.push(by_window.get(&(a, a + len - 1)).copied().unwrap_or(0));
            exp.push(DRAWS as f64 / lengths as f64 / (N - len + 1) as f64);
        }
    }
    assert_eq!(obs.len(), 55);
    assert_eq!(obs.iter().sum::<u64>(), DRAWS as u64);
    let p = chi_square_p(&obs, &exp);
    assert!(p > 0.01, "window law rejected, p = {p}");
}

#[test]
fn min_window_rounds_up_and_clamps() {
    assert_eq!(min_window(18, 0.5), 9);
    assert_eq!(min_window(17, 0.5), 9);
    assert_eq!(min_window(30, 0.1), 3);
    assert_eq!(min_window(1, 0.5), 1);
    assert_eq!(min_window(7, 1.0), 7);
    assert_eq!(min_window(5, 0.01), 1);
}

fn dialogue(id: &str, n: usize, label: Label) -> DialogueSample {
    DialogueSample {
        dialogue_id: id.into(),
        utterance_features: Matrix::from_fn(n, 3, |i, j| (i * 10 + j) as f32),
        label,
        source_task: Task::Ad,
    }
}

#[test]
fn augmentation_keeps_order_labels_and_counts() {
    let src = vec![dialogue("p", 18, Label::ad(true)), dialogue("q", 5, Label::ad(false)), dialogue("r", 1, Label::ad(true))];
    let cfg = AugmentationConfig { subdialogues_per_dialogue: 40, rng_seed: 9, ..AugmentationConfig::default() };
    let out = augment_corpus(&src, Split::Train, &cfg).unwrap();
    assert_eq!(out.samples.len(), 120);
    assert_eq!(out.log.len(), 120);
    for (s, rec) in out.samples.iter().zip(&out.log) {
        let parent = src.iter().find(|d| d.dialogue_id == rec.dialogue_id).unwrap();
        assert_eq!(s.dialogue_id, parent.dialogue_id);
        assert_eq!(s.label, parent.label);
        assert_eq!(s.num_utterances(), rec.b - rec.a + 1);
        assert!(s.num_utterances() >= min_window(parent.num_utterances(), 0.5));
        // Contiguous and in order: row k is parent row a − 1 + k.
        for k in 0..s.num_utterances() {
            assert_eq!(s.utterance_features.row(k), parent.utterance_features.row(rec.a - 1 + k));
        }
    }

    // Per-dialogue streams: reordering the corpus reorders the output only.
    let reversed: Vec<_> = src.iter().rev().cloned().collect();
    let again = augment_corpus(&reversed, Split::Train, &cfg).unwrap();
    let by_id = |o: &xferlab_core::corpus::AugmentedSplit, id: &str| {
        o.log.iter().filter(|r| r.dialogue_id == id).cloned().collect::<Vec<_>>()
    };
    for id in ["p", "q", "r"] {
        assert_eq!(by_id(&out, id), by_id(&again, id));
    }
    assert_eq!(augment_corpus(&src, Split::Train, &cfg).unwrap(), out);
}

#[test]
fn augmentation_is_train_only_and_validated() {
    let src = vec![dialogue("p", 4, Label::ad(true))];
    let cfg = AugmentationConfig::default();
    assert!(matches!(augment_corpus(&src, Split::Test, &cfg), Err(CorpusError::NotTrainSplit(Split::Test))));
    assert!(matches!(augment_corpus(&src, Split::Validation, &cfg), Err(CorpusError::NotTrainSplit(_))));
    let bad = AugmentationConfig { min_fraction: 0.0, ..cfg.clone() };
    assert!(matches!(augment_corpus(&src, Split::Train, &bad), Err(CorpusError::Config(_))));
    let bad = AugmentationConfig { subdialogues_per_dialogue: 0, ..cfg };
    assert!(matches!(augment_corpus(&src, Split::Train, &bad), Err(CorpusError::Config(_))));
}

#[test]
fn balance_target_overrides_the_count() {
    assert_eq!(balanced_subdialogue_count(108 * 50, 189), 29);
    assert_eq!(balanced_subdialogue_count(10, 100), 1);
    assert_eq!(balanced_subdialogue_count(10, 0), 0);
    let src = vec![dialogue("p", 6, Label::ad(true)), dialogue("q", 6, Label::ad(false))];
    let cfg = AugmentationConfig { balance_target: Some(7), ..AugmentationConfig::default() };
    assert_eq!(augment_corpus(&src, Split::Train, &cfg).unwrap().samples.len(), 14);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn windows_are_legal(n in 1usize..200, frac in 0.01f64..=1.0, seed in any::<u64>()) {
        let cfg = AugmentationConfig { min_fraction: frac, ..AugmentationConfig::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let lmin = min_window(n, frac);
        prop_assert!(lmin >= 1 && lmin <= n && lmin as f64 >= frac * n as f64 - 1e-6);
        for _ in 0..20 {
            let (a, b) = sample_subdialogue(n, &cfg, &mut rng);
            prop_assert!(1 <= a && a <= b && b <= n && b - a + 1 >= lmin);
        }
    }

    #[test]
    fn mean_pooling_matches_f64_average(t in 1usize..30, d in 1usize..10, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = Matrix::from_fn(t, d, |_, _| rand::Rng::random_range(&mut rng, -100.0f32..100.0));
        let pooled = pool_with(&m, Pooling::Mean).unwrap();
        let maxed = pool_with(&m, Pooling::Max).unwrap();
        for j in 0..d {
            let col: Vec<f64> = (0..t).map(|i| m.get(i, j) as f64).collect();
            let mean = col.iter().sum::<f64>() / t as f64;
            prop_assert!((pooled[j] as f64 - mean).abs() <= 1e-6 * (1.0 + mean.abs()));
            prop_assert_eq!(maxed[j] as f64, col.iter().cloned().fold(f64::MIN, f64::max));
        }
    }
}

#[test]
fn pooling_rejects_empty_and_non_finite() {
    assert!(matches!(pool_with(&Matrix::zeros(0, 3), Pooling::Mean), Err(CorpusError::EmptyUtterance)));
    let mut m = Matrix::zeros(2, 2);
    m.as_mut_slice()[3] = f32::NAN;
    assert!(matches!(pool_with(&m, Pooling::Mean), Err(CorpusError::NonFinite)));
}

fn frames(id: &str, u: u32, block: u16, modality: Modality, dim: usize) -> Matrix<f32> {
    let salt = id.len() as f32 + block as f32 * 0.1 + if modality == Modality::Text { 5.0 } else { 0.0 };
    Matrix::from_fn(2 + u as usize, dim, |i, j| salt + u as f32 + (i as f32) * 0.5 - j as f32)
}

/// Writes a two-stream corpus with references listed in reverse utterance
/// order.
fn write_corpus(dir: &Path) -> CorpusManifest {
    let mut dialogues = Vec::new();
    for (id, split, n) in [("a1", Split::Train, 3u32), ("b22", Split::Validation, 2), ("c333", Split::Test, 4)] {
        let mut refs = Vec::new();
        for (modality, block, dim) in [(Modality::Acoustic, 3u16, 4usize), (Modality::Text, 12, 2)] {
            for u in (0..n).rev() {
                let path = format!("{id}_{block}_{u}.sgft");
                let t = FeatureTensor::new(id, u, modality, block, frames(id, u, block, modality, dim));
                let checksum = write_feature_file(&t, dir.join(&path)).unwrap();
                refs.push(FeatureRef { modality, block_index: block, path, checksum });
            }
        }
        dialogues.push(DialogueEntry {
            dialogue_id: id.into(),
            split,
            num_utterances: n as usize,
            label: Label::ad(n % 2 == 1),
            feature_refs: refs,
        });
    }
    let m = CorpusManifest { corpus_id: "two-stream".into(), task: Task::Ad, dialogues };
    m.save(dir.join("manifest.json")).unwrap();
    m
}

#[test]
fn loaded_corpus_matches_pooling_oracle() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = write_corpus(dir.path());
    let pooled = PooledCorpus::load(dir.path().join("manifest.json"), &ValidationOptions::default(), Pooling::Mean).unwrap();
    let groups: Vec<_> = pooled.common_groups().into_iter().collect();
    assert_eq!(groups, vec![FeatureGroup::acoustic(3), FeatureGroup::text(12)]);
    let corpus = pooled.assemble(&InputSpec::acoustic_text(3, 12)).unwrap();
    assert_eq!((corpus.train.len(), corpus.validation.len(), corpus.test.len()), (1, 1, 1));

    for entry in &manifest.dialogues {
        let s = corpus
            .train
            .iter()
            .chain(&corpus.validation)
            .chain(&corpus.test)
            .find(|s| s.dialogue_id == entry.dialogue_id)
            .unwrap();
        assert_eq!(s.label, entry.label);
        assert_eq!(s.utterance_features.shape(), (entry.num_utterances, 6));
        for u in 0..entry.num_utterances {
            let mut want = Vec::new();
            for (modality, block, dim) in [(Modality::Acoustic, 3u16, 4usize), (Modality::Text, 12, 2)] {
                let f = frames(&entry.dialogue_id, u as u32, block, modality, dim);
                want.extend((0..dim).map(|j| (0..f.rows()).map(|i| f.get(i, j) as f64).sum::<f64>() / f.rows() as f64));
            }
            for (got, want) in s.utterance_features.row(u).iter().zip(&want) {
                assert!((*got as f64 - want).abs() < 1e-5, "{} utterance {u}", entry.dialogue_id);
            }
        }
    }

    // Text-first order swaps the column blocks.
    let swapped = pooled.assemble(&InputSpec { groups: vec![FeatureGroup::text(12), FeatureGroup::acoustic(3)] }).unwrap();
    assert_eq!(swapped.train[0].utterance_features.row(0)[..2], corpus.train[0].utterance_features.row(0)[4..]);
    assert!(matches!(pooled.assemble(&InputSpec::single(FeatureGroup::acoustic(7))), Err(CorpusError::Dialogue { .. })));
}

#[test]
fn invalid_manifest_is_refused_at_load() {
    let dir = tempfile::tempdir().unwrap();
    let mut manifest = write_corpus(dir.path());
    manifest.dialogues[0].feature_refs[0].checksum ^= 1;
    manifest.save(dir.path().join("manifest.json")).unwrap();
    let err = PooledCorpus::load(dir.path().join("manifest.json"), &ValidationOptions::default(), Pooling::Mean).unwrap_err();
    match err {
        CorpusError::Invalid(report) => assert_eq!(report.violations.len(), 1),
        other => panic!("unexpected {other:?}"),
    }
}
