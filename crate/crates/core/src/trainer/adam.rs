use crate::nn::{Gradients, Matrix, ParamStore, Real};

use super::{TrainConfig, TrainError};

/// First and second moments per parameter plus the step counter.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T> {
    pub m: Vec<Matrix<T>>,
    pub v: Vec<Matrix<T>>,
    pub step: u64,
    /// Per-parameter learning-rate multiplier.
    pub lr_scale: Vec<f64>,
}

impl<T: Real> AdamState<T> {
    pub fn new(store: &ParamStore<T>) -> Self {
        let zeros = || store.values().iter().map(|p| Matrix::zeros(p.rows(), p.cols())).collect();
        Self { m: zeros(), v: zeros(), step: 0, lr_scale: vec![1.0; store.len()] }
    }
}

/// One Adam update with bias correction. Weight decay is coupled
/// (`g ← g + wd·θ`) unless `cfg.decoupled_weight_decay` is set. A non-finite
/// gradient aborts before any parameter changes.
pub fn adam_step<T: Real>(
    store: &mut ParamStore<T>,
    grads: &Gradients<T>,
    state: &mut AdamState<T>,
    lr: f64,
    cfg: &TrainConfig,
) -> Result<(), TrainError> {
    if grads.values().len() != store.len() || state.m.len() != store.len() {
        return Err(TrainError::Config("optimizer state does not match the parameter table".into()));
    }
    for (id, g) in store.ids().zip(grads.values()) {
        if g.shape() != store.get(id).shape() {
            return Err(TrainError::Config(format!("gradient shape mismatch for {}", store.name(id))));
        }
        if !g.is_finite() {
            return Err(TrainError::NonFiniteGradient { param: store.name(id).to_string() });
        }
    }
    state.step += 1;
    let (b1, b2) = cfg.betas;
    let t = state.step as i32;
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    let wd = cfg.weight_decay;
    for (i, (theta, g)) in store.values_mut().iter_mut().zip(grads.values()).enumerate() {
        let step_lr = lr * state.lr_scale[i];
        let (m, v) = (state.m[i].as_mut_slice(), state.v[i].as_mut_slice());
        for (((p, &gi), mi), vi) in theta.as_mut_slice().iter_mut().zip(g.as_slice()).zip(m).zip(v) {
            let pf = p.as_f64();
            let mut gf = gi.as_f64();
            if !cfg.decoupled_weight_decay {
                gf += wd * pf;
            }
            let mn = b1 * mi.as_f64() + (1.0 - b1) * gf;
            let vn = b2 * vi.as_f64() + (1.0 - b2) * gf * gf;
            *mi = T::of(mn);
            *vi = T::of(vn);
            let mut update = step_lr * (mn / c1) / ((vn / c2).sqrt() + cfg.eps);
            if cfg.decoupled_weight_decay {
                update += step_lr * wd * pf;
            }
            *p = T::of(pf - update);
        }
    }
    Ok(())
}

/// Rescales `grads` in place so their global L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_global_norm<T: Real>(grads: &mut Gradients<T>, max_norm: f64) -> f64 {
    let norm = grads.global_norm().as_f64();
    if norm > max_norm {
        grads.scale(T::of(max_norm / norm));
    }
    norm
}
