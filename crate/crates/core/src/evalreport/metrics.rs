use serde::{Deserialize, Serialize};

use super::EvalError;

/// Binary confusion counts with AD as the positive class.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub tn: usize,
}

impl Confusion {
    pub fn from_pairs(predictions: &[bool], labels: &[bool]) -> Result<Self, EvalError> {
        check_lengths(predictions.len(), labels.len())?;
        let mut c = Confusion::default();
        for (&p, &l) in predictions.iter().zip(labels) {
            match (p, l) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, true) => c.fn_ += 1,
                (false, false) => c.tn += 1,
            }
        }
        Ok(c)
    }

    /// `None` when `2TP + FP + FN == 0`.
    pub fn f1(&self) -> Option<f64> {
        let denom = 2 * self.tp + self.fp + self.fn_;
        (denom > 0).then(|| (2 * self.tp) as f64 / denom as f64)
    }
}

fn check_lengths(a: usize, b: usize) -> Result<(), EvalError> {
    if a != b {
        return Err(EvalError::LengthMismatch { predictions: a, targets: b });
    }
    if a == 0 {
        return Err(EvalError::Empty);
    }
    Ok(())
}

/// F1 value and whether the zero-denominator convention produced it.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct F1Outcome {
    pub value: f64,
    pub zero_denominator: bool,
}

pub fn f1_outcome(predictions: &[bool], labels: &[bool]) -> Result<F1Outcome, EvalError> {
    let c = Confusion::from_pairs(predictions, labels)?;
    Ok(match c.f1() {
        Some(value) => F1Outcome { value, zero_denominator: false },
        None => F1Outcome { value: 0.0, zero_denominator: true },
    })
}

/// `2TP / (2TP + FP + FN)` with AD positive; 0 when nothing is positive in
/// either the predictions or the labels.
pub fn f1_score(predictions: &[bool], labels: &[bool]) -> Result<f64, EvalError> {
    Ok(f1_outcome(predictions, labels)?.value)
}

/// `√(mean (p − t)²)`.
pub fn rmse(predictions: &[f64], targets: &[f64]) -> Result<f64, EvalError> {
    check_lengths(predictions.len(), targets.len())?;
    let sum: f64 = predictions.iter().zip(targets).map(|(p, t)| (p - t) * (p - t)).sum();
    Ok((sum / predictions.len() as f64).sqrt())
}
