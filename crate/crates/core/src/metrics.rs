//! Pooled regression metrics over matrix-valued predictions.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;

fn check_pairs(preds: &[Matrix], truths: &[Matrix]) -> Result<()> {
    if preds.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if preds.len() != truths.len() {
        return Err(Error::Dimension(format!(
            "{} predictions but {} truths",
            preds.len(),
            truths.len()
        )));
    }
    for (k, (p, t)) in preds.iter().zip(truths).enumerate() {
        if p.shape() != t.shape() {
            return Err(Error::Dimension(format!(
                "sample {k}: prediction {:?} vs truth {:?}",
                p.shape(),
                t.shape()
            )));
        }
    }
    Ok(())
}

fn squared_error(preds: &[Matrix], truths: &[Matrix]) -> (f64, usize) {
    let mut sse = 0.0;
    let mut n = 0;
    for (p, t) in preds.iter().zip(truths) {
        for (a, b) in p.as_slice().iter().zip(t.as_slice()) {
            sse += (a - b) * (a - b);
        }
        n += t.as_slice().len();
    }
    (sse, n)
}

/// Root of the mean squared error over every entry of every sample.
pub fn rmse(preds: &[Matrix], truths: &[Matrix]) -> Result<f64> {
    check_pairs(preds, truths)?;
    let (sse, n) = squared_error(preds, truths);
    Ok((sse / n as f64).sqrt())
}

/// Mean of all entries of all matrices.
pub fn pooled_mean(truths: &[Matrix]) -> f64 {
    let n: usize = truths.iter().map(|t| t.as_slice().len()).sum();
    truths.iter().map(Matrix::sum).sum::<f64>() / n.max(1) as f64
}

/// Pooled relative squared error `Σ(pred − truth)² / Σ(truth − mean(truth))²`.
///
/// Constant truths leave the denominator at zero; that is reported as a
/// numerical error rather than an infinite or NaN value.
pub fn rse(preds: &[Matrix], truths: &[Matrix]) -> Result<f64> {
    check_pairs(preds, truths)?;
    let (sse, _) = squared_error(preds, truths);
    let mean = pooled_mean(truths);
    let denom: f64 = truths
        .iter()
        .flat_map(|t| t.as_slice())
        .map(|v| (v - mean) * (v - mean))
        .sum();
    if denom <= 0.0 {
        return Err(Error::Numerical(
            "RSE undefined: truths are constant (zero denominator)".into(),
        ));
    }
    Ok(sse / denom)
}

/// rMSE after dividing each prediction and truth by the truth's total mass.
/// Samples with zero mass are skipped.
pub fn normalized_rmse(preds: &[Matrix], truths: &[Matrix]) -> Result<f64> {
    check_pairs(preds, truths)?;
    let mut sse = 0.0;
    let mut n = 0usize;
    for (p, t) in preds.iter().zip(truths) {
        let mass = t.sum();
        if mass <= 0.0 {
            continue;
        }
        for (a, b) in p.as_slice().iter().zip(t.as_slice()) {
            sse += ((a - b) / mass).powi(2);
        }
        n += t.as_slice().len();
    }
    if n == 0 {
        return Err(Error::Numerical("every truth has zero mass".into()));
    }
    Ok((sse / n as f64).sqrt())
}

/// Aggregate and per-sample errors for one evaluation run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub n_samples: usize,
    pub rmse: f64,
    /// `None` when truths are constant and RSE is undefined.
    pub rse: Option<f64>,
    pub normalized_rmse: Option<f64>,
    pub per_sample_rmse: Vec<f64>,
}

impl MetricSummary {
    pub fn compute(preds: &[Matrix], truths: &[Matrix]) -> Result<Self> {
        let total = rmse(preds, truths)?;
        let rse = match rse(preds, truths) {
            Ok(v) => Some(v),
            Err(Error::Numerical(msg)) => {
                log::warn!("{msg}");
                None
            }
            Err(e) => return Err(e),
        };
        let per_sample_rmse = preds
            .iter()
            .zip(truths)
            .map(|(p, t)| rmse(std::slice::from_ref(p), std::slice::from_ref(t)))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            n_samples: preds.len(),
            rmse: total,
            rse,
            normalized_rmse: normalized_rmse(preds, truths).ok(),
            per_sample_rmse,
        })
    }
}
