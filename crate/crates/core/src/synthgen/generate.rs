use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{SynthError, SynthSpec};
use crate::corpus::{pool_utterance, FeatureGroup, PooledCorpus, PooledDialogue};
use crate::feature_store::{
    write_feature_file, CorpusManifest, DialogueEntry, FeatureRef, FeatureTensor, Label, Modality, Split, Task,
};
use crate::nn::Matrix;
use crate::rng;

/// Ground truth of one dialogue, covering both tasks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DialogueTruth {
    pub dialogue_id: String,
    pub ad_positive: bool,
    pub severity: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthDialogue {
    pub dialogue_id: String,
    pub split: Split,
    pub label: Label,
    pub truth: DialogueTruth,
    /// Per utterance, the frame matrix of every stream.
    pub utterances: Vec<BTreeMap<FeatureGroup, Matrix<f32>>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthData {
    pub spec: SynthSpec,
    pub ad: Vec<SynthDialogue>,
    pub dep: Vec<SynthDialogue>,
}

/// Paths written by [`write_pair`].
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeneratedPair {
    pub ad_manifest: PathBuf,
    pub dep_manifest: PathBuf,
    pub spec: PathBuf,
}

fn normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.sample(StandardNormal)
}

/// Unit direction `w` shared by the label and severity scores.
pub(crate) fn direction(spec: &SynthSpec) -> Vec<f64> {
    let mut r = rng::stream(spec.rng_seed, "synth/direction");
    loop {
        let w: Vec<f64> = (0..spec.latent_dim).map(|_| normal(&mut r)).collect();
        let n = w.iter().map(|v| v * v).sum::<f64>().sqrt();
        if n > 1e-6 {
            return w.into_iter().map(|v| v / n).collect();
        }
    }
}

/// `dim × 2L` map from `[z_a; z_d]` to a stream's pooled row, for
/// informative streams.
pub(crate) fn mixing_map(spec: &SynthSpec, group: FeatureGroup) -> Option<Matrix<f64>> {
    let informative = match group.modality {
        Modality::Acoustic => spec.is_informative(group.block_index),
        Modality::Text => true,
    };
    if !informative {
        return None;
    }
    let two_l = 2 * spec.latent_dim;
    let scale = 1.0 / (two_l as f64).sqrt();
    let tag = format!("synth/mix/{}/{}", group.modality.code(), group.block_index);
    let mut r = rng::stream(spec.rng_seed, &tag);
    Some(Matrix::from_fn(spec.group_dim(group), two_l, |_, _| normal(&mut r) * scale))
}

struct Latent {
    u: Vec<f64>,
    ad_positive: bool,
    severity: f64,
}

fn draw_latent<R: Rng + ?Sized>(spec: &SynthSpec, w: &[f64], r: &mut R) -> Latent {
    let l = spec.latent_dim;
    let za: Vec<f64> = (0..l).map(|_| normal(r)).collect();
    let rho = spec.shared_rho;
    let zd: Vec<f64> = za.iter().map(|a| rho * a + (1.0 - rho * rho).sqrt() * normal(r)).collect();
    let sa = w.iter().zip(&za).map(|(a, b)| a * b).sum::<f64>() + spec.label_noise * normal(r);
    let sd = w.iter().zip(&zd).map(|(a, b)| a * b).sum::<f64>() + spec.label_noise * normal(r);
    let severity = (spec.severity_centre + spec.severity_scale * sd).clamp(0.0, spec.severity_max);
    let mut u = za;
    u.extend(zd);
    Latent { u, ad_positive: sa > 0.0, severity }
}

fn frames_for<R: Rng + ?Sized>(row: &[f64], frames: usize, jitter: f64, r: &mut R) -> Matrix<f32> {
    let d = row.len();
    let mut j: Vec<f64> = (0..frames * d).map(|_| jitter * normal(r)).collect();
    for c in 0..d {
        let mean = (0..frames).map(|t| j[t * d + c]).sum::<f64>() / frames as f64;
        for t in 0..frames {
            j[t * d + c] -= mean;
        }
    }
    Matrix::from_fn(frames, d, |t, c| (row[c] + j[t * d + c]) as f32)
}

fn build_dialogue(
    spec: &SynthSpec,
    maps: &BTreeMap<FeatureGroup, Option<Matrix<f64>>>,
    id: String,
    split: Split,
    task: Task,
    latent: Latent,
) -> SynthDialogue {
    let mut r = rng::stream(spec.rng_seed, &format!("synth/features/{id}"));
    let n = r.random_range(spec.n_range.0..=spec.n_range.1);
    let mut utterances = Vec::with_capacity(n);
    for _ in 0..n {
        let mut streams = BTreeMap::new();
        for (&g, m) in maps {
            let d = spec.group_dim(g);
            let row: Vec<f64> = match m {
                Some(m) => (0..d)
                    .map(|i| {
                        let clean: f64 = m.row(i).iter().zip(&latent.u).map(|(a, b)| a * b).sum();
                        clean + spec.noise_sigma * normal(&mut r)
                    })
                    .collect(),
                None => (0..d).map(|_| normal(&mut r)).collect(),
            };
            let frames = r.random_range(spec.frames_range.0..=spec.frames_range.1);
            streams.insert(g, frames_for(&row, frames, spec.frame_jitter, &mut r));
        }
        utterances.push(streams);
    }
    let label = match task {
        Task::Ad => Label::ad(latent.ad_positive),
        Task::Depression => Label::depression(latent.severity),
    };
    SynthDialogue {
        truth: DialogueTruth { dialogue_id: id.clone(), ad_positive: latent.ad_positive, severity: latent.severity },
        dialogue_id: id,
        split,
        label,
        utterances,
    }
}

fn split_name(s: Split) -> &'static str {
    match s {
        Split::Train => "train",
        Split::Validation => "validation",
        Split::Test => "test",
    }
}

fn generate_corpus(
    spec: &SynthSpec,
    task: Task,
    w: &[f64],
    maps: &BTreeMap<FeatureGroup, Option<Matrix<f64>>>,
) -> Vec<SynthDialogue> {
    let counts = match task {
        Task::Ad => spec.ad_dialogues,
        Task::Depression => spec.dep_dialogues,
    };
    let prefix = match task {
        Task::Ad => "ad",
        Task::Depression => "dep",
    };
    let mut out = Vec::new();
    for (split, n) in [(Split::Train, counts.train), (Split::Validation, counts.validation), (Split::Test, counts.test)] {
        let mut r = rng::stream(spec.rng_seed, &format!("synth/latent/{prefix}/{}", split_name(split)));
        let balance = spec.balance_classes && task == Task::Ad;
        let (mut pos_left, mut neg_left) = (n / 2, n - n / 2);
        let mut made = 0;
        while made < n {
            let latent = draw_latent(spec, w, &mut r);
            if balance {
                let slot = if latent.ad_positive { &mut pos_left } else { &mut neg_left };
                if *slot == 0 {
                    continue;
                }
                *slot -= 1;
            }
            let id = format!("{prefix}-{}-{made:04}", split_name(split));
            out.push(build_dialogue(spec, maps, id, split, task, latent));
            made += 1;
        }
    }
    out
}

/// Generates both corpora in memory. Deterministic in the `SynthSpec`.
pub fn generate(spec: &SynthSpec) -> Result<SynthData, SynthError> {
    spec.validate()?;
    let w = direction(spec);
    let maps: BTreeMap<FeatureGroup, Option<Matrix<f64>>> =
        spec.groups().into_iter().map(|g| (g, mixing_map(spec, g))).collect();
    Ok(SynthData {
        spec: spec.clone(),
        ad: generate_corpus(spec, Task::Ad, &w, &maps),
        dep: generate_corpus(spec, Task::Depression, &w, &maps),
    })
}

fn pool_corpus(id: &str, task: Task, ds: &[SynthDialogue]) -> PooledCorpus {
    let dialogues = ds
        .iter()
        .map(|d| {
            let groups = d.utterances[0]
                .keys()
                .map(|&g| {
                    let rows: Vec<Vec<f32>> = d
                        .utterances
                        .iter()
                        .map(|u| pool_utterance(&u[&g]).expect("generated frames are finite and non-empty"))
                        .collect();
                    (g, Matrix::from_rows(&rows).expect("equal widths"))
                })
                .collect();
            PooledDialogue { dialogue_id: d.dialogue_id.clone(), split: d.split, label: d.label, groups }
        })
        .collect();
    PooledCorpus { corpus_id: id.to_string(), task, dialogues }
}

impl SynthData {
    /// Pooled corpora, identical to loading the written files.
    pub fn pooled(&self) -> (PooledCorpus, PooledCorpus) {
        (pool_corpus("synthetic-ad", Task::Ad, &self.ad), pool_corpus("synthetic-dep", Task::Depression, &self.dep))
    }

    pub fn truth(&self, task: Task) -> Vec<DialogueTruth> {
        let ds = match task {
            Task::Ad => &self.ad,
            Task::Depression => &self.dep,
        };
        ds.iter().map(|d| d.truth.clone()).collect()
    }
}

fn file_name(g: FeatureGroup, utterance: usize) -> String {
    let m = match g.modality {
        Modality::Acoustic => 'a',
        Modality::Text => 't',
    };
    format!("{m}{:02}_u{utterance:03}.sgft", g.block_index)
}

fn write_corpus(dir: &Path, corpus_id: &str, task: Task, ds: &[SynthDialogue]) -> Result<PathBuf, SynthError> {
    std::fs::create_dir_all(dir)?;
    let mut entries = Vec::with_capacity(ds.len());
    for d in ds {
        let sub = Path::new("features").join(&d.dialogue_id);
        std::fs::create_dir_all(dir.join(&sub))?;
        let mut feature_refs = Vec::new();
        for (u, streams) in d.utterances.iter().enumerate() {
            for (&g, frames) in streams {
                let rel = sub.join(file_name(g, u));
                let t = FeatureTensor::new(d.dialogue_id.clone(), u as u32, g.modality, g.block_index, frames.clone());
                let checksum = write_feature_file(&t, dir.join(&rel))?;
                feature_refs.push(FeatureRef {
                    modality: g.modality,
                    block_index: g.block_index,
                    path: rel.to_string_lossy().replace('\\', "/"),
                    checksum,
                });
            }
        }
        entries.push(DialogueEntry {
            dialogue_id: d.dialogue_id.clone(),
            split: d.split,
            num_utterances: d.utterances.len(),
            label: d.label,
            feature_refs,
        });
    }
    let manifest = CorpusManifest { corpus_id: corpus_id.into(), task, dialogues: entries };
    let path = dir.join("manifest.json");
    manifest.save(&path)?;
    let truth: Vec<&DialogueTruth> = ds.iter().map(|d| &d.truth).collect();
    std::fs::write(dir.join("truth.json"), serde_json::to_string_pretty(&truth)? + "\n")?;
    Ok(path)
}

/// Writes `ad/` and `dep/` corpora (feature files, manifest, truth sidecar)
/// and `spec.json` under `out_dir`.
pub fn write_pair(data: &SynthData, out_dir: impl AsRef<Path>) -> Result<GeneratedPair, SynthError> {
    let out = out_dir.as_ref();
    std::fs::create_dir_all(out)?;
    let spec = out.join("spec.json");
    std::fs::write(&spec, serde_json::to_string_pretty(&data.spec)? + "\n")?;
    Ok(GeneratedPair {
        ad_manifest: write_corpus(&out.join("ad"), "synthetic-ad", Task::Ad, &data.ad)?,
        dep_manifest: write_corpus(&out.join("dep"), "synthetic-dep", Task::Depression, &data.dep)?,
        spec,
    })
}

/// [`generate`] followed by [`write_pair`].
pub fn gen_pair(spec: &SynthSpec, out_dir: impl AsRef<Path>) -> Result<(SynthData, GeneratedPair), SynthError> {
    let data = generate(spec)?;
    let paths = write_pair(&data, out_dir)?;
    Ok((data, paths))
}
