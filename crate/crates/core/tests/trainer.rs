//! Optimizer, schedule, batching and run-loop properties.

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use xferlab_core::corpus::{Corpus, DialogueSample};
use xferlab_core::feature_store::{Label, Task};
use xferlab_core::model::{AdModel, Downstream, JointModel, ModelConfig, TaskOutput};
use xferlab_core::nn::{Gradients, Graph, Matrix, ParamStore};
use xferlab_core::rng::stream;
use xferlab_core::trainer::{
    adam_step, clip_global_norm, combined_loss, lr_at, make_balanced_batches, train_run, AdamState, TrainConfig,
    TrainData, TrainError,
};

fn scalar_store(v: f64) -> ParamStore<f64> {
    let mut s = ParamStore::new();
    s.add("theta", Matrix::filled(1, 1, v));
    s
}

fn scalar_grad(store: &ParamStore<f64>, g: f64) -> Gradients<f64> {
    let mut grads = Gradients::zeros_like(store);
    grads.values_mut()[0] = Matrix::filled(1, 1, g);
    grads
}

/// Textbook Adam on one scalar.
fn adam_oracle(theta0: f64, grads: &[f64], lr: f64, cfg: &TrainConfig) -> f64 {
    let (b1, b2) = cfg.betas;
    let (mut theta, mut m, mut v) = (theta0, 0.0, 0.0);
    for (t, &g0) in grads.iter().enumerate() {
        let t = (t + 1) as f64;
        let g = if cfg.decoupled_weight_decay { g0 } else { g0 + cfg.weight_decay * theta };
        m = b1 * m + (1.0 - b1) * g;
        v = b2 * v + (1.0 - b2) * g * g;
        let m_hat = m / (1.0 - b1.powf(t));
        let v_hat = v / (1.0 - b2.powf(t));
        let decay = if cfg.decoupled_weight_decay { lr * cfg.weight_decay * theta } else { 0.0 };
        theta -= lr * m_hat / (v_hat.sqrt() + cfg.eps) + decay;
    }
    theta
}

#[test]
fn adam_matches_scalar_oracle() {
    let grads = [0.3, -1.2, 0.05, 2.0, -0.7, 0.0, 0.4];
    for decoupled in [false, true] {
        let cfg = TrainConfig { weight_decay: 0.01, decoupled_weight_decay: decoupled, ..TrainConfig::default() };
        let mut store = scalar_store(0.8);
        let mut state = AdamState::new(&store);
        for &g in &grads {
            let grad = scalar_grad(&store, g);
            adam_step(&mut store, &grad, &mut state, 1e-2, &cfg).unwrap();
        }
        let got = store.values()[0].item();
        let want = adam_oracle(0.8, &grads, 1e-2, &cfg);
        assert!((got - want).abs() < 1e-12, "decoupled={decoupled}: {got} vs {want}");
    }
}

#[test]
fn first_adam_step_moves_by_lr() {
    // Bias correction makes |Δθ| = lr·|g|/(|g| + ε) on step one.
    let cfg = TrainConfig { weight_decay: 0.0, ..TrainConfig::default() };
    let mut store = scalar_store(1.0);
    let mut state = AdamState::new(&store);
    let grad = scalar_grad(&store, 5.0);
    adam_step(&mut store, &grad, &mut state, 1e-3, &cfg).unwrap();
    let want = 1.0 - 1e-3 * 5.0 / (5.0 + cfg.eps);
    assert!((store.values()[0].item() - want).abs() < 1e-15);
}

#[test]
fn non_finite_gradient_leaves_parameters_untouched() {
    let cfg = TrainConfig::default();
    let mut store = scalar_store(0.5);
    let mut state = AdamState::new(&store);
    let grad = scalar_grad(&store, f64::NAN);
    let err = adam_step(&mut store, &grad, &mut state, 1e-3, &cfg).unwrap_err();
    assert!(matches!(err, TrainError::NonFiniteGradient { .. }));
    assert_eq!(store.values()[0].item(), 0.5);
    assert_eq!(state.step, 0);
}

#[test]
fn clipping_caps_the_global_norm() {
    let mut s = ParamStore::new();
    s.add("a", Matrix::zeros(1, 2));
    s.add("b", Matrix::zeros(1, 1));
    let mut g = Gradients::<f64>::zeros_like(&s);
    g.values_mut()[0] = Matrix::from_vec(1, 2, vec![3.0, 4.0]).unwrap();
    g.values_mut()[1] = Matrix::filled(1, 1, 12.0);
    assert_eq!(clip_global_norm(&mut g, 1.0), 13.0);
    assert!((g.global_norm() - 1.0).abs() < 1e-12);
    let before = g.clone();
    clip_global_norm(&mut g, 5.0);
    assert_eq!(g, before);
}

#[test]
fn combined_loss_weights_depression_term() {
    assert!((combined_loss(0.5, 2.0, 0.1) - 0.7).abs() < 1e-15);
    assert_eq!(combined_loss(0.5, 2.0, 0.0), 0.5);
}

fn sample(id: usize, rows: usize, dim: usize, task: Task, rng: &mut impl Rng) -> DialogueSample {
    let label = match task {
        Task::Ad => Label::ad(id % 2 == 0),
        Task::Depression => Label::depression((id % 25) as f64),
    };
    let shift = if id % 2 == 0 { 0.5 } else { -0.5 };
    DialogueSample {
        dialogue_id: format!("{task:?}-{id}"),
        utterance_features: Matrix::from_fn(rows, dim, |_, _| rng.random_range(-1.0f32..1.0) + shift),
        label,
        source_task: task,
    }
}

fn tiny_corpus(task: Task, n: usize, dim: usize, seed: u64) -> Corpus {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut split = |offset: usize, k: usize| (0..k).map(|i| sample(offset + i, 3 + i % 3, dim, task, &mut rng)).collect();
    Corpus { corpus_id: format!("{task:?}"), task, train: split(0, n), validation: split(n, 4), test: split(n + 4, 4) }
}

fn tiny_model() -> ModelConfig {
    ModelConfig { d_model: 8, heads: 2, d_ff: 16, encoder_layers: 1, fc_hidden: 4, dropout_p: 0.2, positional_encoding: true }
}

#[test]
fn zero_learning_rate_keeps_initial_parameters() {
    let ad = tiny_corpus(Task::Ad, 10, 4, 1);
    let cfg = TrainConfig { epochs: 3, lr_start: 0.0, lr_end: 0.0, seeds: vec![3], ..TrainConfig::default() };
    let init = |r: &mut ChaCha8Rng| AdModel::<f32>::init(4, tiny_model(), r);
    let out = train_run(&cfg, TrainData::single(&ad), 3, init).unwrap();
    let fresh = init(&mut stream(3, "init")).unwrap();
    assert_eq!(out.model.store().values(), fresh.store().values());
    assert_eq!(out.result.trace.len(), 3);
}

#[test]
fn runs_are_deterministic_per_seed() {
    let ad = tiny_corpus(Task::Ad, 10, 4, 2);
    let dep = tiny_corpus(Task::Depression, 14, 3, 3);
    let cfg = TrainConfig { epochs: 2, lr_start: 1e-3, lr_end: 1e-4, ..TrainConfig::default() };
    let init = |r: &mut ChaCha8Rng| JointModel::<f32>::init(4, 3, tiny_model(), r);
    let a = train_run(&cfg, TrainData::joint(&ad, &dep), 7, init).unwrap();
    let b = train_run(&cfg, TrainData::joint(&ad, &dep), 7, init).unwrap();
    assert_eq!(a.result, b.result);
    assert_eq!(a.model.store.values(), b.model.store.values());
    let c = train_run(&cfg, TrainData::joint(&ad, &dep), 8, init).unwrap();
    assert_ne!(a.model.store.values(), c.model.store.values());
}

#[test]
fn joint_gradient_is_sum_of_task_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let ad = sample(0, 5, 4, Task::Ad, &mut rng);
    let dep = sample(1, 6, 3, Task::Depression, &mut rng);
    let m = JointModel::<f64>::init(4, 3, tiny_model(), &mut stream(4, "init")).unwrap();
    let lambda = 0.1;
    let ce = |g: &mut Graph<'_, f64>| match m.forward_sample(g, &ad).unwrap() {
        TaskOutput::AdLogits(l) => g.cross_entropy(l, ad.ad_class().unwrap()).unwrap(),
        TaskOutput::Severity(_) => unreachable!(),
    };
    let se = |g: &mut Graph<'_, f64>| match m.forward_sample(g, &dep).unwrap() {
        TaskOutput::Severity(p) => g.squared_error(p, dep.label.depression_severity.unwrap()).unwrap(),
        TaskOutput::AdLogits(_) => unreachable!(),
    };

    let mut g = Graph::new(&m.store);
    let (a, d) = (ce(&mut g), se(&mut g));
    let d = g.scale(d, lambda);
    let total = g.add(a, d).unwrap();
    let joint = g.backward(total).unwrap();

    let mut g = Graph::new(&m.store);
    let a = ce(&mut g);
    let ga = g.backward(a).unwrap();
    let mut g = Graph::new(&m.store);
    let d = se(&mut g);
    let d = g.scale(d, lambda);
    let gd = g.backward(d).unwrap();

    for (id, name) in m.store.ids().map(|id| (id, m.store.name(id).to_string())) {
        let (j, a, d) = (joint.get(id).as_slice(), ga.get(id).as_slice(), gd.get(id).as_slice());
        for k in 0..j.len() {
            assert!((j[k] - (a[k] + d[k])).abs() <= 1e-6 * (1.0 + j[k].abs()), "{name}[{k}]");
        }
        if name.starts_with("dep.") {
            assert!(a.iter().all(|&v| v == 0.0), "{name} receives AD gradient");
        }
        if name.starts_with("ad.") {
            assert!(d.iter().all(|&v| v == 0.0), "{name} receives depression gradient");
        }
        if name.starts_with("shared.") && name.ends_with("weight") {
            assert!(a.iter().any(|&v| v != 0.0) && d.iter().any(|&v| v != 0.0), "{name} misses a task");
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn schedule_is_linear_and_monotone(epochs in 2usize..200, start in 1e-6f64..1e-2, frac in 0.0f64..1.0) {
        let cfg = TrainConfig { epochs, lr_start: start, lr_end: start * frac, ..TrainConfig::default() };
        prop_assert_eq!(lr_at(0, &cfg).unwrap(), cfg.lr_start);
        prop_assert_eq!(lr_at(epochs - 1, &cfg).unwrap(), cfg.lr_end);
        prop_assert!(lr_at(epochs, &cfg).is_err());
        let mut prev = f64::INFINITY;
        for e in 0..epochs {
            let lr = lr_at(e, &cfg).unwrap();
            let t = e as f64 / (epochs - 1) as f64;
            let oracle = cfg.lr_start * (1.0 - t) + cfg.lr_end * t;
            prop_assert!((lr - oracle).abs() <= 4.0 * f64::EPSILON * cfg.lr_start, "epoch {}: {} vs {}", e, lr, oracle);
            prop_assert!(lr <= prev);
            prev = lr;
        }
    }

    #[test]
    fn joint_batches_are_balanced(num_ad in 1usize..120, num_dep in 1usize..120, bs in 2usize..33, seed in 0u64..1000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let batches = make_balanced_batches(num_ad, num_dep, bs, &mut rng).unwrap();
        let (ad_share, dep_share) = (bs.div_ceil(2), bs / 2);
        let ad_leads = num_ad.div_ceil(ad_share) >= num_dep.div_ceil(dep_share);
        let (last, full) = batches.split_last().unwrap();
        for b in full {
            prop_assert_eq!((b.ad.len(), b.dep.len()), (ad_share, dep_share));
        }
        prop_assert!(!last.ad.is_empty() && !last.dep.is_empty());
        prop_assert!(last.ad.len() <= ad_share && last.dep.len() <= dep_share);
        prop_assert!(batches.iter().all(|b| b.ad.iter().all(|&i| i < num_ad) && b.dep.iter().all(|&i| i < num_dep)));
        let mut lead: Vec<usize> = batches.iter().flat_map(|b| if ad_leads { b.ad.clone() } else { b.dep.clone() }).collect();
        lead.sort_unstable();
        prop_assert_eq!(lead, (0..if ad_leads { num_ad } else { num_dep }).collect::<Vec<_>>());
        // The cycled stream never repeats an index before exhausting a pass.
        let trail: Vec<usize> = batches.iter().flat_map(|b| if ad_leads { b.dep.clone() } else { b.ad.clone() }).collect();
        let n = if ad_leads { num_dep } else { num_ad };
        for pass in trail.chunks(n) {
            let mut p = pass.to_vec();
            p.sort_unstable();
            p.dedup();
            prop_assert_eq!(p.len(), pass.len());
        }
    }

    #[test]
    fn single_stream_batches_partition(n in 1usize..200, bs in 1usize..40, seed in 0u64..1000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let batches = make_balanced_batches(0, n, bs, &mut rng).unwrap();
        prop_assert_eq!(batches.len(), n.div_ceil(bs));
        prop_assert!(batches.iter().all(|b| b.ad.is_empty() && b.len() <= bs));
        let mut all: Vec<usize> = batches.iter().flat_map(|b| b.dep.clone()).collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
    }
}
