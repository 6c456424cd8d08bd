use nalgebra::{DMatrix, DVector};

use super::generate::{direction, mixing_map};
use super::{SynthError, SynthSpec};
use crate::corpus::{DialogueSample, FeatureGroup};
use crate::evalreport::f1_score;
use crate::nn::Matrix;

/// Closed-form AD decision rule of the generating model for inputs built
/// from `groups` concatenated in order.
///
/// Given the dialogue mean `x̄ = M·u + noise/√N`, the posterior mean of `u`
/// is `Σ Mᵀ (M Σ Mᵀ + V/N)⁻¹ x̄` with `Σ` the latent prior covariance and `V`
/// the per-row noise variances. The label is positive when `w` projects the
/// posterior mean of `z_a` above zero.
#[derive(Clone, Debug)]
pub struct Oracle {
    m: DMatrix<f64>,
    prior: DMatrix<f64>,
    noise_var: DVector<f64>,
    w: DVector<f64>,
    latent_dim: usize,
}

impl Oracle {
    pub fn new(spec: &SynthSpec, groups: &[FeatureGroup]) -> Result<Self, SynthError> {
        spec.validate()?;
        let l = spec.latent_dim;
        let rows: usize = groups.iter().map(|&g| spec.group_dim(g)).sum();
        let mut m = DMatrix::zeros(rows, 2 * l);
        let mut noise_var = DVector::zeros(rows);
        let mut at = 0;
        for &g in groups {
            let d = spec.group_dim(g);
            if d == 0 {
                return Err(SynthError::Spec(format!("spec emits no {:?} block {}", g.modality, g.block_index)));
            }
            match mixing_map(spec, g) {
                Some(map) => {
                    for i in 0..d {
                        for j in 0..2 * l {
                            m[(at + i, j)] = map.get(i, j);
                        }
                        noise_var[at + i] = spec.noise_sigma * spec.noise_sigma;
                    }
                }
                None => {
                    for i in 0..d {
                        noise_var[at + i] = 1.0;
                    }
                }
            }
            at += d;
        }
        let rho = spec.shared_rho;
        let prior = DMatrix::from_fn(2 * l, 2 * l, |i, j| {
            if i == j {
                1.0
            } else if i % l == j % l {
                rho
            } else {
                0.0
            }
        });
        Ok(Self { m, prior, noise_var, w: DVector::from_vec(direction(spec)), latent_dim: l })
    }

    pub fn input_dim(&self) -> usize {
        self.m.nrows()
    }

    /// Posterior mean of the AD score `w·z_a` given the pooled rows.
    pub fn score(&self, pooled: &Matrix<f32>) -> Result<f64, SynthError> {
        if pooled.cols() != self.input_dim() {
            return Err(SynthError::DimMismatch { got: pooled.cols(), expected: self.input_dim() });
        }
        let n = pooled.rows().max(1) as f64;
        let mean = DVector::from_vec(pooled.column_means().into_iter().map(f64::from).collect());
        let cov = &self.m * &self.prior * self.m.transpose() + DMatrix::from_diagonal(&(&self.noise_var / n));
        let inv = cov.pseudo_inverse(1e-10).map_err(|e| SynthError::Spec(e.to_string()))?;
        let post = &self.prior * self.m.transpose() * inv * mean;
        Ok(self.w.dot(&post.rows(0, self.latent_dim)))
    }

    pub fn predict(&self, pooled: &Matrix<f32>) -> Result<bool, SynthError> {
        Ok(self.score(pooled)? > 0.0)
    }
}

/// Oracle AD label for one dialogue's pooled rows.
pub fn oracle_label(pooled: &Matrix<f32>, spec: &SynthSpec, groups: &[FeatureGroup]) -> Result<bool, SynthError> {
    Oracle::new(spec, groups)?.predict(pooled)
}

pub fn oracle_labels(samples: &[DialogueSample], spec: &SynthSpec, groups: &[FeatureGroup]) -> Result<Vec<bool>, SynthError> {
    let o = Oracle::new(spec, groups)?;
    samples.iter().map(|s| o.predict(&s.utterance_features)).collect()
}

fn design(samples: &[DialogueSample]) -> DMatrix<f64> {
    let d = samples.first().map_or(0, DialogueSample::input_dim);
    DMatrix::from_fn(samples.len(), d + 1, |i, j| {
        if j == d {
            1.0
        } else {
            samples[i].utterance_features.column_means()[j] as f64
        }
    })
}

/// Test F1 of a ridge least-squares probe on dialogue-mean features, fitted
/// to ±1 AD targets on `train`.
pub fn linear_probe_f1(train: &[DialogueSample], test: &[DialogueSample], ridge: f64) -> Result<f64, SynthError> {
    let labels = |s: &[DialogueSample]| -> Result<Vec<bool>, SynthError> {
        s.iter()
            .map(|x| x.label.ad_positive.ok_or_else(|| SynthError::Spec(format!("{} has no AD label", x.dialogue_id))))
            .collect()
    };
    let (ytr, yte) = (labels(train)?, labels(test)?);
    let x = design(train);
    let y = DVector::from_iterator(ytr.len(), ytr.iter().map(|&b| if b { 1.0 } else { -1.0 }));
    let gram = x.transpose() * &x + DMatrix::identity(x.ncols(), x.ncols()) * ridge;
    let beta = gram
        .cholesky()
        .ok_or_else(|| SynthError::Spec("ridge system is not positive definite".into()))?
        .solve(&(x.transpose() * y));
    let pred: Vec<bool> = (design(test) * beta).iter().map(|v| *v > 0.0).collect();
    f1_score(&pred, &yte).map_err(|e| SynthError::Spec(e.to_string()))
}
