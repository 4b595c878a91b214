//! Synthetic datasets with a planted teacher.
//!
//! Inputs are standard normal. A teacher cost network maps each input to a
//! cost matrix, a pair of softmax-linear maps gives its unit-mass row and
//! column marginals, and a sigmoid-linear map gives its total mass. The
//! target is the mass times the entropic plan of that problem, plus optional
//! Gaussian noise clipped at zero. Every quantity is a deterministic
//! function of the input, so both the marginals and the cost are learnable.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lcot::{cost_forward, CostNetwork};
use crate::matrix::{MarginalPair, Matrix, MatrixSample, Shapes};
use crate::ot::{solve_sinkhorn, SolverConfig, TransportProblem};

use super::Dataset;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    pub in_rows: usize,
    pub in_cols: usize,
    pub out_rows: usize,
    pub out_cols: usize,
    pub n_samples: usize,
    pub seed: u64,
    pub teacher_hidden: usize,
    /// Multiplier on the teacher's Glorot weights; 0 gives a uniform cost.
    pub teacher_gain: f64,
    /// Scale of the marginal logits; larger values give peakier marginals.
    pub marginal_spread: f64,
    pub mass_min: f64,
    pub mass_max: f64,
    /// Standard deviation of additive target noise.
    pub noise: f64,
    /// Entropic regularization used to build the teacher plans.
    pub epsilon: f64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            in_rows: 3,
            in_cols: 4,
            out_rows: 4,
            out_cols: 5,
            n_samples: 200,
            seed: 0,
            teacher_hidden: 10,
            teacher_gain: 3.0,
            marginal_spread: 1.0,
            mass_min: 5.0,
            mass_max: 20.0,
            noise: 0.0,
            epsilon: 0.5,
        }
    }
}

impl SyntheticSpec {
    pub fn shapes(&self) -> Result<Shapes> {
        Shapes::new(self.in_rows, self.in_cols, self.out_rows, self.out_cols)
    }

    pub fn validate(&self) -> Result<()> {
        self.shapes()?;
        if self.n_samples == 0 {
            return Err(Error::Config("n_samples must be at least 1".into()));
        }
        if self.teacher_hidden == 0 {
            return Err(Error::Config("teacher_hidden must be at least 1".into()));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return Err(Error::Config(format!("noise must be >= 0, got {}", self.noise)));
        }
        if !(self.mass_min > 0.0 && self.mass_max >= self.mass_min && self.mass_max.is_finite()) {
            return Err(Error::Config(format!(
                "mass range [{}, {}] is invalid",
                self.mass_min, self.mass_max
            )));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::Config(format!("epsilon must be positive, got {}", self.epsilon)));
        }
        if !(self.teacher_gain >= 0.0 && self.marginal_spread >= 0.0) {
            return Err(Error::Config("teacher_gain and marginal_spread must be >= 0".into()));
        }
        Ok(())
    }
}

/// The planted generator behind a synthetic dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct Teacher {
    pub cost_net: CostNetwork,
    row_logits: Vec<f64>,
    col_logits: Vec<f64>,
    mass_weights: Vec<f64>,
    mass_min: f64,
    mass_max: f64,
    solver: SolverConfig,
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|v| (v - max).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

fn linear(weights: &[f64], x: &[f64], out: usize) -> Vec<f64> {
    let d = x.len();
    (0..out)
        .map(|r| weights[r * d..(r + 1) * d].iter().zip(x).map(|(w, v)| w * v).sum())
        .collect()
}

impl Teacher {
    fn draw(spec: &SyntheticSpec, rng: &mut ChaCha8Rng) -> Result<Self> {
        let shapes = spec.shapes()?;
        let d = shapes.input_len();
        let cost_net = if spec.teacher_gain == 0.0 {
            CostNetwork::zeros(shapes, spec.teacher_hidden)?
        } else {
            CostNetwork::glorot_scaled(shapes, spec.teacher_hidden, spec.teacher_gain, rng)?
        };
        let std = spec.marginal_spread / (d as f64).sqrt();
        let mut gauss = |n: usize, std: f64| -> Vec<f64> {
            (0..n).map(|_| std * rng.sample::<f64, _>(StandardNormal)).collect()
        };
        let row_logits = gauss(spec.out_rows * d, std);
        let col_logits = gauss(spec.out_cols * d, std);
        let mass_weights = gauss(d, 1.0 / (d as f64).sqrt());
        Ok(Self {
            cost_net,
            row_logits,
            col_logits,
            mass_weights,
            mass_min: spec.mass_min,
            mass_max: spec.mass_max,
            solver: SolverConfig {
                epsilon: spec.epsilon,
                tolerance: 1e-11,
                max_iterations: 20_000,
                ..SolverConfig::default()
            },
        })
    }

    /// Teacher of `spec`, as drawn by [`generate_synthetic`].
    pub fn from_spec(spec: &SyntheticSpec) -> Result<Self> {
        spec.validate()?;
        Self::draw(spec, &mut ChaCha8Rng::seed_from_u64(spec.seed))
    }

    /// Unit-mass marginals and total mass for an input.
    pub fn marginals(&self, input: &Matrix) -> (MarginalPair, f64) {
        let s = self.cost_net.shapes();
        let x = input.as_slice();
        let row = softmax(&linear(&self.row_logits, x, s.out_rows));
        let col = softmax(&linear(&self.col_logits, x, s.out_cols));
        let z: f64 = self.mass_weights.iter().zip(x).map(|(w, v)| w * v).sum();
        let mass = self.mass_min + (self.mass_max - self.mass_min) / (1.0 + (-z).exp());
        (
            MarginalPair {
                row,
                col,
                mass: 1.0,
            },
            mass,
        )
    }

    /// Noise-free target for an input.
    pub fn target(&self, input: &Matrix) -> Result<Matrix> {
        let (m, mass) = self.marginals(input);
        let cost = cost_forward(&self.cost_net, input)?;
        let problem = TransportProblem::balanced(m.row, m.col, cost)?;
        Ok(solve_sinkhorn(&problem, &self.solver)?.plan.scaled(mass))
    }
}

/// Generates `spec.n_samples` samples; deterministic under `spec.seed`.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<Dataset> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let teacher = Teacher::draw(spec, &mut rng)?;
    let noise = Normal::new(0.0, spec.noise).map_err(|e| Error::Config(e.to_string()))?;
    let width = spec.n_samples.to_string().len();
    (0..spec.n_samples)
        .map(|k| {
            let input = Matrix::from_fn(spec.in_rows, spec.in_cols, |_, _| {
                rng.sample::<f64, _>(StandardNormal)
            });
            let mut target = teacher.target(&input)?;
            if spec.noise > 0.0 {
                target = Matrix::from_fn(target.rows(), target.cols(), |i, j| {
                    (target.get(i, j) + noise.sample(&mut rng)).max(0.0)
                });
            }
            Ok(MatrixSample::new(format!("syn{k:0width$}"), input, Some(target)))
        })
        .collect()
}
