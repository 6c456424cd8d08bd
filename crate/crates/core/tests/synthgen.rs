//! Synthetic corpora: determinism, validity, label statistics and the
//! closed-form oracle.

use xferlab_core::corpus::{FeatureGroup, InputSpec, PooledCorpus, Pooling};
use xferlab_core::evalreport::f1_score;
use xferlab_core::feature_store::{validate_manifest, CorpusManifest, Task, ValidationOptions};
use xferlab_core::synthgen::{generate, linear_probe_f1, oracle_labels, write_pair, Oracle, SplitCounts, SynthError, SynthSpec};

fn counts(train: usize, validation: usize, test: usize) -> SplitCounts {
    SplitCounts { train, validation, test }
}

fn small() -> SynthSpec {
    SynthSpec {
        ad_dialogues: counts(6, 2, 4),
        dep_dialogues: counts(6, 2, 4),
        n_range: (3, 6),
        dim: 6,
        text_dim: Some(4),
        num_blocks: 3,
        ..SynthSpec::default()
    }
}

fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let cov: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    cov / (vx * vy).sqrt()
}

#[test]
fn generation_is_deterministic_in_the_spec() {
    let a = generate(&small()).unwrap();
    assert_eq!(a, generate(&small()).unwrap());
    let b = generate(&SynthSpec { rng_seed: 1, ..small() }).unwrap();
    assert_ne!(a.ad[0].utterances, b.ad[0].utterances);
}

#[test]
fn written_corpora_validate_and_match_memory() {
    let dir = tempfile::tempdir().unwrap();
    let data = generate(&small()).unwrap();
    let pair = write_pair(&data, dir.path()).unwrap();
    let opts = ValidationOptions::default();
    for path in [&pair.ad_manifest, &pair.dep_manifest] {
        let m = CorpusManifest::load(path).unwrap();
        let report = validate_manifest(&m, path.parent().unwrap(), &opts);
        assert!(report.is_valid(), "{:?}", report.violations);
        // 3 acoustic blocks plus text for every utterance.
        for d in &m.dialogues {
            assert_eq!(d.feature_refs.len(), 4 * d.num_utterances);
        }
    }
    let (ad, dep) = data.pooled();
    assert_eq!(PooledCorpus::load(&pair.ad_manifest, &opts, Pooling::Mean).unwrap(), ad);
    assert_eq!(PooledCorpus::load(&pair.dep_manifest, &opts, Pooling::Mean).unwrap(), dep);
    assert_eq!(SynthSpec::load(&pair.spec).unwrap(), small());
}

#[test]
fn labels_are_balanced_and_severities_bounded() {
    let spec = SynthSpec { ad_dialogues: counts(41, 10, 20), dep_dialogues: counts(200, 0, 0), severity_scale: 15.0, ..small() };
    let data = generate(&spec).unwrap();
    for split in [xferlab_core::feature_store::Split::Train, xferlab_core::feature_store::Split::Test] {
        let labels: Vec<bool> =
            data.ad.iter().filter(|d| d.split == split).map(|d| d.label.ad_positive.unwrap()).collect();
        let pos = labels.iter().filter(|&&p| p).count();
        assert_eq!(pos, labels.len() / 2, "{split:?}");
    }
    let sev: Vec<f64> = data.dep.iter().map(|d| d.label.depression_severity.unwrap()).collect();
    assert!(sev.iter().all(|s| (0.0..=24.0).contains(s)));
    // A wide scale saturates both ends of the range.
    assert!(sev.contains(&0.0) && sev.contains(&24.0));
    assert!(data.dep.iter().all(|d| d.label.ad_positive.is_none() && d.truth.severity == d.label.depression_severity.unwrap()));
}

fn label_severity_correlation(rho: f64) -> f64 {
    let spec = SynthSpec {
        dep_dialogues: counts(500, 0, 0),
        ad_dialogues: counts(0, 0, 0),
        shared_rho: rho,
        n_range: (1, 1),
        num_blocks: 1,
        text_dim: None,
        ..SynthSpec::default()
    };
    let truth = generate(&spec).unwrap().truth(Task::Depression);
    let labels: Vec<f64> = truth.iter().map(|t| f64::from(u8::from(t.ad_positive))).collect();
    let sev: Vec<f64> = truth.iter().map(|t| t.severity).collect();
    pearson(&labels, &sev)
}

#[test]
fn shared_rho_controls_label_severity_correlation() {
    let independent = label_severity_correlation(0.0);
    assert!(independent.abs() <= 0.1, "ρ = 0 gives correlation {independent}");
    // Point-biserial correlation of sign(s) with 0.9·s + noise is about 0.9·√(2/π) ≈ 0.72.
    let shared = label_severity_correlation(0.9);
    assert!(shared > 0.6, "ρ = 0.9 gives correlation {shared}");
}

#[test]
fn noiseless_oracle_recovers_every_label() {
    let spec = SynthSpec { noise_sigma: 0.0, ad_dialogues: counts(20, 0, 40), ..small() };
    let data = generate(&spec).unwrap();
    let corpus = data.pooled().0.assemble(&InputSpec::acoustic_text(2, 12)).unwrap();
    let groups = [FeatureGroup::acoustic(2), FeatureGroup::text(12)];
    for split in [&corpus.train, &corpus.test] {
        let pred = oracle_labels(split, &spec, &groups).unwrap();
        let truth: Vec<bool> = split.iter().map(|s| s.label.ad_positive.unwrap()).collect();
        assert_eq!(pred, truth);
        assert_eq!(f1_score(&pred, &truth).unwrap(), 1.0);
    }
}

#[test]
fn heavy_noise_drives_the_oracle_to_chance() {
    let spec = SynthSpec { noise_sigma: 200.0, ad_dialogues: counts(0, 0, 1000), text_dim: None, num_blocks: 1, ..small() };
    let corpus = generate(&spec).unwrap().pooled().0.assemble(&InputSpec::single(FeatureGroup::acoustic(1))).unwrap();
    let pred = oracle_labels(&corpus.test, &spec, &[FeatureGroup::acoustic(1)]).unwrap();
    let truth: Vec<bool> = corpus.test.iter().map(|s| s.label.ad_positive.unwrap()).collect();
    let f1 = f1_score(&pred, &truth).unwrap();
    assert!((f1 - 0.5).abs() < 0.1, "F1 {f1}");
}

#[test]
fn planted_block_is_the_only_informative_one() {
    let spec = SynthSpec {
        informative_block: Some(5),
        num_blocks: 8,
        text_dim: None,
        ad_dialogues: counts(200, 0, 200),
        dep_dialogues: counts(0, 0, 0),
        ..SynthSpec::default()
    };
    let pooled = generate(&spec).unwrap().pooled().0;
    let mut scores = Vec::new();
    for b in 1..=8 {
        let c = pooled.assemble(&InputSpec::single(FeatureGroup::acoustic(b))).unwrap();
        scores.push(linear_probe_f1(&c.train, &c.test, 1e-3).unwrap());
    }
    let best = scores.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0 + 1;
    assert_eq!(best, 5, "{scores:?}");
    assert!(scores[4] > 0.85, "{scores:?}");
    for (i, s) in scores.iter().enumerate().filter(|(i, _)| *i != 4) {
        assert!((s - 0.5).abs() < 0.15, "block {}: {s}", i + 1);
    }
}

#[test]
fn oracle_rejects_mismatched_inputs_and_bad_specs() {
    let spec = small();
    let o = Oracle::new(&spec, &[FeatureGroup::acoustic(1)]).unwrap();
    assert_eq!(o.input_dim(), 6);
    let wrong = xferlab_core::nn::Matrix::zeros(3, 5);
    assert!(matches!(o.predict(&wrong), Err(SynthError::DimMismatch { got: 5, expected: 6 })));
    assert!(Oracle::new(&SynthSpec { text_dim: None, ..small() }, &[FeatureGroup::text(12)]).is_err());
    for bad in [
        SynthSpec { shared_rho: 1.5, ..small() },
        SynthSpec { n_range: (5, 2), ..small() },
        SynthSpec { informative_block: Some(9), ..small() },
        SynthSpec { noise_sigma: -1.0, ..small() },
    ] {
        assert!(generate(&bad).is_err());
    }
    let toml = "shared_rho = 0.25\nnum_blocks = 4\n[ad_dialogues]\ntrain = 3\nvalidation = 1\ntest = 1\n";
    let s = SynthSpec::from_text(toml).unwrap();
    assert_eq!((s.shared_rho, s.num_blocks, s.ad_dialogues.train), (0.25, 4, 3));
    assert!(SynthSpec::from_text("{\"shared_rho\": 2.0}").is_err());
}

#[test]
fn oracle_bounds_a_trained_classifier() {
    use xferlab_core::model::{AdModel, ModelConfig};
    use xferlab_core::pipeline::prepare_corpus;
    use xferlab_core::trainer::{train_run, TrainConfig, TrainData};

    let spec = SynthSpec { ad_dialogues: counts(40, 10, 100), dep_dialogues: counts(0, 0, 0), noise_sigma: 1.0, ..small() };
    let (ad, _) = generate(&spec).unwrap().pooled();
    let input = InputSpec::acoustic_text(2, 12);
    let corpus = prepare_corpus(&ad, &input, None).unwrap();
    let dim = corpus.input_dim().unwrap();
    let model = ModelConfig { d_model: 16, heads: 2, d_ff: 32, fc_hidden: 8, ..ModelConfig::default() };
    let train = TrainConfig { epochs: 15, lr_start: 1e-3, lr_end: 2.5e-4, seeds: vec![0], ..TrainConfig::default() };
    let run = train_run(&train, TrainData::single(&corpus), 0, |r| AdModel::init(dim, model.clone(), r)).unwrap();
    let trained = run.result.test_f1.unwrap();

    let test = ad.assemble(&input).unwrap().test;
    let pred = oracle_labels(&test, &spec, &[FeatureGroup::acoustic(2), FeatureGroup::text(12)]).unwrap();
    let truth: Vec<bool> = test.iter().map(|s| s.label.ad_positive.unwrap()).collect();
    let oracle = f1_score(&pred, &truth).unwrap();
    assert!(oracle + 0.03 >= trained, "oracle {oracle} vs trained {trained}");
    assert!(trained > 0.5, "training learned nothing: {trained}");
}
