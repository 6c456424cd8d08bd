//! Scalar loss functions outside the tape, used for reporting and as
//! reference values for the graph ops.

use super::NnError;

/// `−log softmax(logits)[label]`, computed with max-subtraction.
pub fn cross_entropy_loss(logits: &[f64], label: usize) -> Result<f64, NnError> {
    if label >= logits.len() {
        return Err(NnError::Label(label));
    }
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(NnError::NonFinite("logits".into()));
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let log_z = max + logits.iter().map(|&v| (v - max).exp()).sum::<f64>().ln();
    Ok(log_z - logits[label])
}

/// `(pred − target)²`.
pub fn mse_loss(pred: f64, target: f64) -> f64 {
    (pred - target) * (pred - target)
}

/// Mean of squared errors over paired predictions and targets.
pub fn mean_squared_error(pairs: &[(f64, f64)]) -> f64 {
    if pairs.is_empty() {
        return 0.0;
    }
    pairs.iter().map(|&(p, t)| mse_loss(p, t)).sum::<f64>() / pairs.len() as f64
}

/// Softmax with max-subtraction.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&v| (v - max).exp()).collect();
    let z: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / z).collect()
}
