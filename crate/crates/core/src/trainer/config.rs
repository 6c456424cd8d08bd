use std::path::Path;

use serde::{Deserialize, Serialize};

use super::TrainError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr_start: f64,
    pub lr_end: f64,
    pub weight_decay: f64,
    /// `false`: L2 term added to the gradient before the moment updates.
    /// `true`: decay applied directly to the parameters after the step.
    pub decoupled_weight_decay: bool,
    pub betas: (f64, f64),
    pub eps: f64,
    /// Samples per batch.
    pub batch_size: usize,
    pub lambda_dep: f64,
    pub seeds: Vec<u64>,
    pub dropout_p: f64,
    /// Global-norm gradient clipping threshold; `None` disables clipping.
    pub grad_clip: Option<f64>,
    /// Learning-rate multiplier for block-mixing logits.
    pub block_weight_lr_scale: f64,
    /// Evaluate training-set F1 after every epoch.
    pub track_train_f1: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            lr_start: 4e-5,
            lr_end: 1e-5,
            weight_decay: 5e-3,
            decoupled_weight_decay: false,
            betas: (0.9, 0.999),
            eps: 1e-8,
            batch_size: 16,
            lambda_dep: 0.1,
            seeds: vec![0, 1, 2, 3, 4],
            dropout_p: 0.2,
            grad_clip: Some(5.0),
            block_weight_lr_scale: 1.0,
            track_train_f1: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |msg: String| Err(TrainError::Config(msg));
        if self.epochs == 0 {
            return bad("epochs must be at least 1".into());
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if !(self.lr_start >= 0.0 && self.lr_end >= 0.0 && self.lr_start.is_finite()) {
            return bad(format!("learning rates must be finite and non-negative, got {} → {}", self.lr_start, self.lr_end));
        }
        if self.lr_end > self.lr_start {
            return bad(format!("lr_end {} exceeds lr_start {}", self.lr_end, self.lr_start));
        }
        let (b1, b2) = self.betas;
        if !((0.0..1.0).contains(&b1) && (0.0..1.0).contains(&b2)) {
            return bad(format!("betas ({b1}, {b2}) outside [0, 1)"));
        }
        if !(self.eps > 0.0) || !(self.weight_decay >= 0.0) || !(self.lambda_dep >= 0.0) {
            return bad("eps must be positive; weight_decay and lambda_dep non-negative".into());
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return bad(format!("dropout_p {} outside [0, 1)", self.dropout_p));
        }
        if self.grad_clip.is_some_and(|c| !(c > 0.0)) {
            return bad("grad_clip must be positive".into());
        }
        if !(self.block_weight_lr_scale > 0.0) {
            return bad("block_weight_lr_scale must be positive".into());
        }
        if self.seeds.is_empty() {
            return bad("at least one seed is required".into());
        }
        Ok(())
    }

    /// Parses JSON, or TOML when the text does not start with `{`.
    pub fn from_text(text: &str) -> Result<Self, TrainError> {
        let cfg: Self = if text.trim_start().starts_with('{') {
            serde_json::from_str(text).map_err(|e| TrainError::Config(e.to_string()))?
        } else {
            toml::from_str(text).map_err(|e| TrainError::Config(e.to_string()))?
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, TrainError> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }
}

/// `lr_start + (lr_end − lr_start)·epoch/(E − 1)`; `lr_start` when `E = 1`.
///
/// Evaluated as `(lr_start·(K − epoch) + lr_end·epoch)/K` with `K = E − 1`,
/// carrying both products and their sum exactly before the one division, so
/// the result is within one ulp of the exact value and hits both endpoints.
pub fn lr_at(epoch: usize, cfg: &TrainConfig) -> Result<f64, TrainError> {
    if epoch >= cfg.epochs {
        return Err(TrainError::EpochOutOfRange { epoch, epochs: cfg.epochs });
    }
    if cfg.epochs == 1 {
        return Ok(cfg.lr_start);
    }
    let k = (cfg.epochs - 1) as f64;
    let (u, v) = (k - epoch as f64, epoch as f64);
    let (a, b) = (cfg.lr_start * u, cfg.lr_end * v);
    let (ea, eb) = (cfg.lr_start.mul_add(u, -a), cfg.lr_end.mul_add(v, -b));
    // Error-free sum of the two products.
    let hi = a + b;
    let bv = hi - a;
    let lo = (a - (hi - bv)) + (b - bv) + ea + eb;
    let q = hi / k;
    let r = (-q).mul_add(k, hi) + lo;
    Ok(q + r / k)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_endpoints() {
        let cfg = TrainConfig::default();
        assert_eq!(lr_at(0, &cfg).unwrap(), 4e-5);
        assert_eq!(lr_at(29, &cfg).unwrap(), 1e-5);
        assert!((lr_at(15, &cfg).unwrap() - 2.4483e-5).abs() < 1e-9);
        assert!(lr_at(30, &cfg).is_err());
        let one = TrainConfig { epochs: 1, ..cfg };
        assert_eq!(lr_at(0, &one).unwrap(), 4e-5);
    }

    #[test]
    fn parses_json_and_toml() {
        let j = TrainConfig::from_text(r#"{"epochs": 3, "seeds": [7]}"#).unwrap();
        assert_eq!((j.epochs, j.seeds.clone()), (3, vec![7]));
        let t = TrainConfig::from_text("epochs = 4\nlambda_dep = 0.5\n").unwrap();
        assert_eq!((t.epochs, t.lambda_dep, t.batch_size), (4, 0.5, 16));
        assert!(TrainConfig::from_text(r#"{"epochz": 3}"#).is_err());
        assert!(TrainConfig::from_text(r#"{"lr_start": 1e-5, "lr_end": 1e-4}"#).is_err());
    }
}
