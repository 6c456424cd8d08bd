use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::trainer::RunResult;

/// Mean, maximum and population standard deviation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct F1Stats {
    pub avg: f64,
    pub max: f64,
    pub std: f64,
}

impl F1Stats {
    pub fn from_values(values: &[f64]) -> Result<Self, EvalError> {
        if values.is_empty() {
            return Err(EvalError::Empty);
        }
        let n = values.len() as f64;
        let avg = values.iter().sum::<f64>() / n;
        let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let var = values.iter().map(|v| (v - avg) * (v - avg)).sum::<f64>() / n;
        Ok(Self { avg, max, std: var.sqrt() })
    }
}

/// Cross-seed summary in the transfer-table column order.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedAggregate {
    pub seeds: usize,
    pub f1_avg: Option<f64>,
    pub f1_max: Option<f64>,
    /// Population standard deviation.
    pub f1_std: Option<f64>,
    pub rmse_avg: Option<f64>,
    pub rmse_min: Option<f64>,
    /// At least one seed's F1 came from the zero-denominator convention.
    pub f1_zero_denominator: bool,
}

/// Aggregates F1 and RMSE over seeds. Every result must carry the same
/// metrics.
pub fn aggregate_seeds(results: &[RunResult]) -> Result<SeedAggregate, EvalError> {
    if results.is_empty() {
        return Err(EvalError::Empty);
    }
    let f1: Vec<f64> = results.iter().filter_map(|r| r.test_f1).collect();
    let rm: Vec<f64> = results.iter().filter_map(|r| r.test_rmse).collect();
    for (name, n) in [("test_f1", f1.len()), ("test_rmse", rm.len())] {
        if n != 0 && n != results.len() {
            return Err(EvalError::InconsistentMetrics(format!(
                "{name} present in {n} of {} results",
                results.len()
            )));
        }
    }
    let f = (!f1.is_empty()).then(|| F1Stats::from_values(&f1)).transpose()?;
    let (rmse_avg, rmse_min) = if rm.is_empty() {
        (None, None)
    } else {
        (
            Some(rm.iter().sum::<f64>() / rm.len() as f64),
            Some(rm.iter().copied().fold(f64::INFINITY, f64::min)),
        )
    };
    Ok(SeedAggregate {
        seeds: results.len(),
        f1_avg: f.map(|s| s.avg),
        f1_max: f.map(|s| s.max),
        f1_std: f.map(|s| s.std),
        rmse_avg,
        rmse_min,
        f1_zero_denominator: results.iter().any(|r| r.test_f1_zero_denominator),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_seed_fixture() {
        let s = F1Stats::from_values(&[0.8, 0.9]).unwrap();
        assert!((s.avg - 0.85).abs() < 1e-12);
        assert_eq!(s.max, 0.9);
        assert!((s.std - 0.05).abs() < 1e-12);
    }

    #[test]
    fn constant_has_zero_std() {
        let s = F1Stats::from_values(&[0.857; 5]).unwrap();
        assert!((s.avg - 0.857).abs() < 1e-15);
        assert!(s.std < 1e-15);
        assert!(F1Stats::from_values(&[]).is_err());
    }
}
