//! RMSE and the asymmetric prognostics score.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

fn check(pred: &[f64], truth: &[f64]) -> Result<()> {
    if pred.is_empty() || pred.len() != truth.len() {
        return Err(Error::Usage(alloc::format!(
            "metric inputs must be equal-length and nonempty (got {} and {})",
            pred.len(),
            truth.len()
        )));
    }
    Ok(())
}

pub fn rmse(pred: &[f64], truth: &[f64]) -> Result<f64> {
    check(pred, truth)?;
    let sq: f64 = pred.iter().zip(truth).map(|(p, t)| (p - t) * (p - t)).sum();
    Ok(libm::sqrt(sq / pred.len() as f64))
}

/// Penalty for one prediction error `d = predicted - true`: late predictions
/// (`d >= 0`) grow as `exp(d/10) - 1`, early ones as `exp(-d/13) - 1`.
pub fn score_term(d: f64) -> f64 {
    if d < 0.0 {
        libm::exp(-d / 13.0) - 1.0
    } else {
        libm::exp(d / 10.0) - 1.0
    }
}

pub fn score(pred: &[f64], truth: &[f64]) -> Result<f64> {
    check(pred, truth)?;
    Ok(pred.iter().zip(truth).map(|(p, t)| score_term(p - t)).sum())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub rmse: f64,
    pub score: f64,
    pub n: usize,
    /// `predicted - true` per sample.
    pub errors: Vec<f64>,
}

impl EvalResult {
    pub fn compute(pred: &[f64], truth: &[f64]) -> Result<Self> {
        Ok(Self {
            rmse: rmse(pred, truth)?,
            score: score(pred, truth)?,
            n: pred.len(),
            errors: pred.iter().zip(truth).map(|(p, t)| p - t).collect(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rmse_cases() {
        assert_eq!(rmse(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        let r = rmse(&[3.0, 4.0], &[0.0, 0.0]).unwrap();
        assert!((r - libm::sqrt(12.5)).abs() < 1e-15);
        assert!(rmse(&[1.0], &[1.0, 2.0]).is_err());
        assert!(rmse(&[], &[]).is_err());
    }

    #[test]
    fn score_cases() {
        assert_eq!(score(&[5.0, 9.0], &[5.0, 9.0]).unwrap(), 0.0);
        let early = score(&[0.0], &[13.0]).unwrap();
        let late = score(&[13.0], &[0.0]).unwrap();
        assert!((early - (core::f64::consts::E - 1.0)).abs() < 1e-12);
        assert!((late - (libm::exp(1.3) - 1.0)).abs() < 1e-12);
        assert!(late > early);
    }

    #[test]
    fn eval_result_zero_iff_exact() {
        let r = EvalResult::compute(&[1.0, 2.0], &[1.0, 2.0]).unwrap();
        assert_eq!((r.rmse, r.score), (0.0, 0.0));
        let r = EvalResult::compute(&[1.0, 2.5], &[1.0, 2.0]).unwrap();
        assert!(r.rmse > 0.0 && r.score > 0.0);
        assert_eq!(r.errors, alloc::vec![0.0, 0.5]);
    }
}
