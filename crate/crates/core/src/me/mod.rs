//! Marginal estimation: two vector regressors predicting the row and column
//! sums of the target from the flattened input.

mod forest;
mod svr;

pub use forest::{RandomForest, RandomForestConfig, RegressionTree};
pub use svr::{Kernel, Svr, SvrConfig};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{marginals_of, normalize_marginals, MarginalPair, Matrix, MatrixSample};

/// A fitted multi-output regressor.
pub trait Regressor {
    fn input_dim(&self) -> usize;
    fn output_dim(&self) -> usize;
    fn predict(&self, input: &[f64]) -> Result<Vec<f64>>;
}

/// Which classical regressor backs the ME block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MeBackend {
    RandomForest(RandomForestConfig),
    Svr(SvrConfig),
}

impl Default for MeBackend {
    fn default() -> Self {
        MeBackend::RandomForest(RandomForestConfig::default())
    }
}

impl MeBackend {
    pub fn validate(&self) -> Result<()> {
        match self {
            MeBackend::RandomForest(c) => c.validate(),
            MeBackend::Svr(c) => c.validate(),
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            MeBackend::RandomForest(_) => "rf",
            MeBackend::Svr(_) => "svr",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
enum ScalarModel {
    Forest(RandomForest),
    Svr(Svr),
}

impl ScalarModel {
    fn predict(&self, x: &[f64]) -> f64 {
        match self {
            ScalarModel::Forest(m) => m.predict(x),
            ScalarModel::Svr(m) => m.predict(x),
        }
    }
}

/// Per-feature standardization fitted on training inputs. Features with zero
/// spread are only centered.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureScaler {
    mean: Vec<f64>,
    scale: Vec<f64>,
}

impl FeatureScaler {
    pub fn fit(x: &[Vec<f64>]) -> Self {
        let d = x.first().map_or(0, Vec::len);
        let n = x.len().max(1) as f64;
        let mean: Vec<f64> = (0..d).map(|k| x.iter().map(|r| r[k]).sum::<f64>() / n).collect();
        let scale = (0..d)
            .map(|k| {
                let v = x.iter().map(|r| (r[k] - mean[k]).powi(2)).sum::<f64>() / n;
                if v.sqrt() > 1e-12 {
                    v.sqrt()
                } else {
                    1.0
                }
            })
            .collect();
        Self { mean, scale }
    }

    pub fn transform(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.mean.iter().zip(&self.scale))
            .map(|(v, (m, s))| (v - m) / s)
            .collect()
    }
}

/// One independent scalar model per output coordinate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VectorRegressor {
    input_dim: usize,
    scaler: Option<FeatureScaler>,
    models: Vec<ScalarModel>,
}

impl VectorRegressor {
    pub fn fit(inputs: &[Vec<f64>], targets: &[Vec<f64>], backend: &MeBackend) -> Result<Self> {
        backend.validate()?;
        if inputs.is_empty() {
            return Err(Error::EmptyDataset);
        }
        if inputs.len() != targets.len() {
            return Err(Error::Dimension(format!(
                "{} inputs but {} targets",
                inputs.len(),
                targets.len()
            )));
        }
        let input_dim = inputs[0].len();
        let output_dim = targets[0].len();
        if let Some(r) = inputs.iter().find(|r| r.len() != input_dim) {
            return Err(Error::Dimension(format!(
                "input length {} differs from {input_dim}",
                r.len()
            )));
        }
        if let Some(t) = targets.iter().find(|t| t.len() != output_dim) {
            return Err(Error::Dimension(format!(
                "target length {} differs from {output_dim}",
                t.len()
            )));
        }
        let scaler = match backend {
            MeBackend::RandomForest(_) => None,
            MeBackend::Svr(_) => Some(FeatureScaler::fit(inputs)),
        };
        let x: Vec<Vec<f64>> = match &scaler {
            Some(s) => inputs.iter().map(|r| s.transform(r)).collect(),
            None => inputs.to_vec(),
        };
        let models = (0..output_dim)
            .map(|k| {
                let y: Vec<f64> = targets.iter().map(|t| t[k]).collect();
                Ok(match backend {
                    MeBackend::RandomForest(cfg) => {
                        let cfg = RandomForestConfig {
                            seed: cfg.seed.wrapping_add((k as u64) << 32),
                            ..cfg.clone()
                        };
                        ScalarModel::Forest(RandomForest::fit(&x, &y, &cfg)?)
                    }
                    MeBackend::Svr(cfg) => ScalarModel::Svr(Svr::fit(&x, &y, cfg)?),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            input_dim,
            scaler,
            models,
        })
    }
}

impl Regressor for VectorRegressor {
    fn input_dim(&self) -> usize {
        self.input_dim
    }

    fn output_dim(&self) -> usize {
        self.models.len()
    }

    fn predict(&self, input: &[f64]) -> Result<Vec<f64>> {
        if input.len() != self.input_dim {
            return Err(Error::Dimension(format!(
                "regressor expects {} features, got {}",
                self.input_dim,
                input.len()
            )));
        }
        let x = match &self.scaler {
            Some(s) => s.transform(input),
            None => input.to_vec(),
        };
        Ok(self.models.iter().map(|m| m.predict(&x)).collect())
    }
}

/// Row or column marginal regression for one axis.
pub fn fit_axis(dataset: &[MatrixSample], backend: &MeBackend, rows: bool) -> Result<VectorRegressor> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut inputs = Vec::with_capacity(dataset.len());
    let mut targets = Vec::with_capacity(dataset.len());
    for s in dataset {
        let m = marginals_of(s.target()?)?;
        inputs.push(s.input.as_slice().to_vec());
        targets.push(if rows { m.row } else { m.col });
    }
    VectorRegressor::fit(&inputs, &targets, backend)
}

/// Fits the row and column regressors `(M_r, M_c)`.
pub fn fit_me(dataset: &[MatrixSample], backend: &MeBackend) -> Result<(VectorRegressor, VectorRegressor)> {
    Ok((
        fit_axis(dataset, backend, true)?,
        fit_axis(dataset, backend, false)?,
    ))
}

fn clip(mut v: Vec<f64>) -> Vec<f64> {
    for x in &mut v {
        if *x < 0.0 {
            *x = 0.0;
        }
    }
    v
}

/// Turns raw row and column predictions into a unit-mass marginal pair and
/// its scale: negatives are clipped to zero, then the two masses are
/// reconciled.
pub fn reconcile_predictions(row: Vec<f64>, col: Vec<f64>) -> Result<(MarginalPair, f64)> {
    let pair = MarginalPair::new(clip(row), clip(col))?;
    normalize_marginals(&pair)
}

pub fn predict_marginals(
    m_r: &dyn Regressor,
    m_c: &dyn Regressor,
    input: &Matrix,
) -> Result<(MarginalPair, f64)> {
    reconcile_predictions(m_r.predict(input.as_slice())?, m_c.predict(input.as_slice())?)
}

/// Mean squared difference of two vectors.
pub fn me_mse(pred: &[f64], truth: &[f64]) -> Result<f64> {
    if pred.len() != truth.len() {
        return Err(Error::Dimension(format!(
            "prediction length {} differs from truth length {}",
            pred.len(),
            truth.len()
        )));
    }
    if pred.is_empty() {
        return Err(Error::Dimension("empty vectors".into()));
    }
    Ok(pred.iter().zip(truth).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / pred.len() as f64)
}
